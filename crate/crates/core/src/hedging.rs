//! Deflators, hedging prices and the strict-local-martingale diagnostics.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::markets::{integrate_with_increments, MarketModel, PathState, PricePath, VolatilityMatrix};
use crate::mc::map_paths;
use crate::numeric::Estimate;
use crate::paths::{FactorPaths, PathGrid};
use crate::portfolios::{portfolio_value, PortfolioRule};

/// `sigma^T a^-1` as a row-major `m x n` matrix, so `theta = P (b - r 1)`.
struct ThetaMap {
    p: Vec<f64>,
    n: usize,
    m: usize,
}

impl ThetaMap {
    fn new(vol: &VolatilityMatrix) -> Result<Self> {
        let chol = Cholesky::new(vol.covariance()).ok_or_else(|| {
            Error::NumericFailure("covariance is not positive definite".into())
        })?;
        let (n, m) = (vol.n(), vol.m());
        let a_inv: DMatrix<f64> = chol.inverse();
        let mut p = vec![0.0; m * n];
        for nu in 0..m {
            for j in 0..n {
                p[nu * n + j] = (0..n).map(|i| vol.sigma(i, nu) * a_inv[(i, j)]).sum();
            }
        }
        Ok(Self { p, n, m })
    }

    fn apply(&self, excess: &[f64], out: &mut [f64]) {
        for (nu, o) in out.iter_mut().enumerate() {
            let row = &self.p[nu * self.n..(nu + 1) * self.n];
            *o = row.iter().zip(excess).map(|(a, b)| a * b).sum();
        }
    }
}

/// `theta = sigma^T (sigma sigma^T)^-1 (b - r 1)` from rates of return `b`.
pub fn theta_from_returns(vol: &VolatilityMatrix, b: &[f64], r: f64) -> Result<Vec<f64>> {
    if b.len() != vol.n() {
        return Err(invalid("need one rate of return per stock"));
    }
    let map = ThetaMap::new(vol)?;
    let excess: Vec<f64> = b.iter().map(|x| x - r).collect();
    let mut theta = vec![0.0; map.m];
    map.apply(&excess, &mut theta);
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericFailure("market price of risk is not finite".into()));
    }
    Ok(theta)
}

/// Market price of risk of `model` at time `t` and prices `x`, with a fresh
/// path state (no stopping times reached yet).
pub fn market_price_of_risk(model: &MarketModel, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.n() || x.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("prices must be n positive numbers"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mut gamma = vec![0.0; model.n()];
    model.growth_rates(t, &lx, &PathState::default(), &mut gamma);
    let b: Vec<f64> = (0..model.n())
        .map(|i| gamma[i] + 0.5 * model.vol().a(i, i))
        .collect();
    theta_from_returns(model.vol(), &b, model.short_rate())
}

/// Deflator `L` and money-market account `B` along one price path.
#[derive(Debug, Clone)]
pub struct DeflatorPath {
    grid: Arc<PathGrid>,
    m: usize,
    /// Row-major `K x m`, at the left point of every step.
    theta: Vec<f64>,
    log_l: Vec<f64>,
    log_b: Vec<f64>,
}

impl DeflatorPath {
    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn theta(&self, k: usize) -> &[f64] {
        &self.theta[k * self.m..(k + 1) * self.m]
    }

    pub fn log_l(&self, k: usize) -> f64 {
        self.log_l[k]
    }

    pub fn l(&self, k: usize) -> f64 {
        self.log_l[k].exp()
    }

    pub fn b(&self, k: usize) -> f64 {
        self.log_b[k].exp()
    }

    pub fn terminal_l(&self) -> f64 {
        *self.log_l.last().unwrap()
    }

    /// `L(T) / B(T)`.
    pub fn terminal_discount(&self) -> f64 {
        (self.log_l.last().unwrap() - self.log_b.last().unwrap()).exp()
    }
}

/// Builds `log L` step by step from the increments that drove `prices`.
pub fn deflator_from_increments(
    model: &MarketModel,
    prices: &PricePath,
    increments: &[f64],
) -> Result<DeflatorPath> {
    let m = model.m();
    let k_max = prices.n_steps();
    if increments.len() != k_max * m {
        return Err(invalid("increments do not match the price path"));
    }
    let vol = prices.vol();
    let map = ThetaMap::new(vol)?;
    let r = model.short_rate();
    let half_a: Vec<f64> = (0..vol.n()).map(|i| 0.5 * vol.a(i, i) - r).collect();
    let mut excess = vec![0.0; vol.n()];
    let grid = prices.grid();
    let mut theta = vec![0.0; k_max * m];
    let mut log_l = Vec::with_capacity(k_max + 1);
    let mut log_b = Vec::with_capacity(k_max + 1);
    log_l.push(0.0);
    log_b.push(0.0);
    let (mut ll, mut lb) = (0.0, 0.0);
    for k in 0..k_max {
        let dt = grid.dt(k);
        for ((e, g), h) in excess.iter_mut().zip(prices.growth(k)).zip(&half_a) {
            *e = g + h;
        }
        let th = &mut theta[k * m..(k + 1) * m];
        map.apply(&excess, th);
        let mut norm2 = 0.0;
        let mut dot = 0.0;
        for nu in 0..m {
            norm2 += th[nu] * th[nu];
            dot += th[nu] * increments[k * m + nu];
        }
        ll += -dot - 0.5 * norm2 * dt;
        lb += r * dt;
        if !ll.is_finite() && ll != f64::NEG_INFINITY {
            return Err(Error::IntegrationFailure {
                path: prices.path_index(),
                step: k,
                reason: "market price of risk is not finite".into(),
            });
        }
        log_l.push(ll);
        log_b.push(lb);
    }
    Ok(DeflatorPath {
        grid: Arc::new(grid.clone()),
        m,
        theta,
        log_l,
        log_b,
    })
}

/// Deflator for `prices`, which must have been integrated from `factors`.
pub fn deflator_path(
    model: &MarketModel,
    prices: &PricePath,
    factors: &FactorPaths,
) -> Result<DeflatorPath> {
    if factors.grid() != prices.grid() {
        return Err(invalid("price path and increments use different grids"));
    }
    let inc = factors.increments(prices.path_index())?;
    deflator_from_increments(model, prices, &inc)
}

/// Price path and deflator from one draw of the increments.
pub fn simulate_with_deflator(
    model: &MarketModel,
    factors: &FactorPaths,
    path_index: usize,
) -> Result<(PricePath, DeflatorPath)> {
    let inc = factors.increments(path_index)?;
    let prices = integrate_with_increments(model, factors.shared_grid(), &inc, path_index)?;
    let l = deflator_from_increments(model, &prices, &inc)?;
    Ok((prices, l))
}

/// A traded value process `Xi`.
#[derive(Clone)]
pub enum Underlying {
    Stock(usize),
    /// Total capitalisation, i.e. the market portfolio started at `sum X(0)`.
    Market,
    /// A portfolio started at `sum X(0)`.
    Portfolio(Arc<dyn PortfolioRule>),
}

impl fmt::Debug for Underlying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Underlying::Stock(i) => write!(f, "Stock({i})"),
            Underlying::Market => write!(f, "Market"),
            Underlying::Portfolio(r) => write!(f, "Portfolio({})", r.name()),
        }
    }
}

impl Underlying {
    pub fn initial(&self, model: &MarketModel) -> f64 {
        match self {
            Underlying::Stock(i) => model.x0()[*i],
            Underlying::Market | Underlying::Portfolio(_) => model.x0().iter().sum(),
        }
    }

    pub fn terminal(&self, prices: &PricePath) -> Result<f64> {
        let k = prices.n_steps();
        match self {
            Underlying::Stock(i) => Ok(prices.price(k, *i)),
            Underlying::Market => Ok(prices.total_cap(k)),
            Underlying::Portfolio(rule) => {
                let z0 = prices.total_cap(0);
                Ok(portfolio_value(rule.as_ref(), prices, z0)?.terminal())
            }
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Underlying::Stock(i) if *i >= n => Err(invalid(format!("no stock {i}"))),
            _ => Ok(()),
        }
    }
}

type Payoff = Arc<dyn Fn(&PricePath) -> f64 + Send + Sync>;

/// Contingent claim paid at the horizon.
#[derive(Clone)]
pub enum ClaimSpec {
    /// `(Xi(T) - q)^+`.
    Call { underlying: Underlying, strike: f64 },
    /// `(Xi_1(T) - Xi_2(T))^+`.
    Exchange { long: Underlying, short: Underlying },
    /// `Xi(T)` itself.
    Asset(Underlying),
    Custom { name: String, payoff: Payoff },
}

impl fmt::Debug for ClaimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClaimSpec::Call { underlying, strike } => write!(f, "Call({underlying:?}, {strike})"),
            ClaimSpec::Exchange { long, short } => write!(f, "Exchange({long:?}, {short:?})"),
            ClaimSpec::Asset(u) => write!(f, "Asset({u:?})"),
            ClaimSpec::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ClaimSpec {
    pub fn call_on_stock(i: usize, strike: f64) -> Self {
        ClaimSpec::Call {
            underlying: Underlying::Stock(i),
            strike,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            ClaimSpec::Call { underlying, strike } => {
                if !(strike.is_finite() && *strike >= 0.0) {
                    return Err(invalid("strike must be nonnegative"));
                }
                underlying.check(n)
            }
            ClaimSpec::Exchange { long, short } => {
                long.check(n)?;
                short.check(n)
            }
            ClaimSpec::Asset(u) => u.check(n),
            ClaimSpec::Custom { .. } => Ok(()),
        }
    }

    pub fn payoff(&self, prices: &PricePath) -> Result<f64> {
        let y = match self {
            ClaimSpec::Call { underlying, strike } => (underlying.terminal(prices)? - strike).max(0.0),
            ClaimSpec::Exchange { long, short } => {
                (long.terminal(prices)? - short.terminal(prices)?).max(0.0)
            }
            ClaimSpec::Asset(u) => u.terminal(prices)?,
            ClaimSpec::Custom { payoff, .. } => payoff(prices),
        };
        if !(y.is_finite() && y >= 0.0) {
            return Err(Error::NumericFailure(format!(
                "payoff {y} on path {} is not a nonnegative number",
                prices.path_index()
            )));
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HedgePrice {
    /// Monte Carlo estimate of `E[Y L(T) / B(T)]`.
    pub price: Estimate,
    /// Sample mean of `L(T)` on the same paths.
    pub deflator: Estimate,
    /// Paths with a strictly positive payoff.
    pub nonzero_payoffs: usize,
}

/// Hedging price `E[Y L(T) / B(T)]` over the paths of `factors`.
pub fn hedge_price(model: &MarketModel, claim: &ClaimSpec, factors: &FactorPaths) -> Result<HedgePrice> {
    claim.validate(model.n())?;
    let rows = map_paths(factors.n_paths(), |i| {
        let (prices, l) = simulate_with_deflator(model, factors, i)?;
        let y = claim.payoff(&prices)?;
        Ok((y * l.terminal_discount(), l.terminal_l().exp(), y > 0.0))
    })?;
    let h: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let l: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(HedgePrice {
        price: Estimate::from_samples(&h),
        deflator: Estimate::from_samples(&l),
        nonzero_payoffs: rows.iter().filter(|r| r.2).count(),
    })
}

/// Closed-form price of a call on a lognormal asset.
pub fn black_scholes_call(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> Result<f64> {
    if !(s0 > 0.0 && strike >= 0.0 && vol >= 0.0 && horizon > 0.0) {
        return Err(invalid("bad Black-Scholes arguments"));
    }
    let disc = strike * (-r * horizon).exp();
    if strike == 0.0 {
        return Ok(s0);
    }
    if vol == 0.0 {
        return Ok((s0 - disc).max(0.0));
    }
    let sd = vol * horizon.sqrt();
    let d1 = ((s0 / strike).ln() + (r + 0.5 * vol * vol) * horizon) / sd;
    let d2 = d1 - sd;
    let nd = Normal::new(0.0, 1.0).map_err(|e| Error::NumericFailure(e.to_string()))?;
    Ok(s0 * nd.cdf(d1) - disc * nd.cdf(d2))
}

/// Sample mean of `L(T)` at two resolutions of the same Brownian paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeflatorStudy {
    pub coarse_dt: f64,
    pub fine_dt: f64,
    pub coarse: Estimate,
    pub fine: Estimate,
    /// `(1 - mean) / std_err` at each resolution.
    pub coarse_deficit_sigmas: f64,
    pub fine_deficit_sigmas: f64,
    /// Deficit of at least 3 standard errors on the coarse grid that keeps
    /// at least 2 on the fine grid.
    pub flagged: bool,
}

/// Statistical evidence that `E[L(T)] < 1`.
///
/// The Euler deflator is a true martingale for every fixed step, so a
/// deficit in the sample mean reflects the heavy right tail of `L(T)` that
/// the sample does not reach; the report only flags a deficit that survives
/// refinement.
pub fn deflator_study(model: &MarketModel, fine: &FactorPaths) -> Result<DeflatorStudy> {
    let coarse = fine.coarsened(2)?;
    let sample = |f: &FactorPaths| -> Result<Estimate> {
        let l = map_paths(f.n_paths(), |i| {
            let (_, l) = simulate_with_deflator(model, f, i)?;
            Ok(l.terminal_l().exp())
        })?;
        Ok(Estimate::from_samples(&l))
    };
    let c = sample(&coarse)?;
    let fe = sample(fine)?;
    let cs = -c.z_score(1.0);
    let fs = -fe.z_score(1.0);
    Ok(DeflatorStudy {
        coarse_dt: coarse.grid().dt(coarse.grid().n_steps() - 1),
        fine_dt: fine.grid().dt(fine.grid().n_steps() - 1),
        coarse: c,
        fine: fe,
        coarse_deficit_sigmas: cs,
        fine_deficit_sigmas: fs,
        flagged: cs >= 3.0 && fs >= 2.0,
    })
}

/// `L(T) Z(T) / (z B(T))` for a portfolio started at `z`; its mean should not
/// exceed 1 beyond noise.
pub fn deflated_portfolio_value(
    model: &MarketModel,
    rule: &dyn PortfolioRule,
    factors: &FactorPaths,
) -> Result<Estimate> {
    let v = map_paths(factors.n_paths(), |i| {
        let (prices, l) = simulate_with_deflator(model, factors, i)?;
        let z = portfolio_value(rule, &prices, 1.0)?;
        Ok(z.terminal() * l.terminal_discount())
    })?;
    Ok(Estimate::from_samples(&v))
}

/// `Z(0) n^((1-p)/p) exp(-eps delta (1-p) T / 2)`.
pub fn call_envelope(z0: f64, n: usize, p: f64, eps: f64, delta: f64, horizon: f64) -> f64 {
    z0 * (n as f64).powf((1.0 - p) / p) * (-0.5 * eps * delta * (1.0 - p) * horizon).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallDecayRow {
    pub horizon: f64,
    pub h_hat: Estimate,
    /// `E[L(T) X_1(T) / B(T)]`.
    pub underlying: Estimate,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallDecayStudy {
    pub strike: f64,
    pub x1_0: f64,
    pub rows: Vec<CallDecayRow>,
    /// Every `h_hat(T) < X_1(0)`.
    pub below_underlying: bool,
    /// No increase along the ladder beyond 3 combined standard errors.
    pub nonincreasing: bool,
    /// Every `E[L X_1 / B]` at most the envelope plus 3 standard errors.
    pub within_envelope: bool,
}

/// Hedging price of a call on the first stock along a ladder of horizons.
///
/// Each horizon gets its own uniform grid with step close to `dt` and
/// `n_paths` paths seeded from `master_seed`.
pub fn call_decay_study(
    model: &MarketModel,
    strike: f64,
    horizons: &[f64],
    dt: f64,
    n_paths: usize,
    master_seed: u64,
    p: f64,
) -> Result<CallDecayStudy> {
    if !(model.short_rate() > 0.0) {
        return Err(invalid("the call-decay study needs a positive short rate"));
    }
    let delta = model.guaranteed_delta().ok_or_else(|| {
        invalid("the call-decay study needs a model with a guaranteed diversity level")
    })?;
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p must lie in (0, 1)"));
    }
    if horizons.is_empty() || !(dt > 0.0) {
        return Err(invalid("need at least one horizon and a positive step"));
    }
    let (eps, _) = model.vol().certificate();
    let z0: f64 = model.x0().iter().sum();
    let x1_0 = model.x0()[0];
    let claim = ClaimSpec::call_on_stock(0, strike);
    let asset = ClaimSpec::Asset(Underlying::Stock(0));
    claim.validate(model.n())?;
    let mut rows = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let steps = (t / dt).round().max(1.0) as usize;
        let f = FactorPaths::new(PathGrid::uniform(t, steps)?, model.m(), n_paths, master_seed)?;
        let per_path = map_paths(n_paths, |i| {
            let (prices, l) = simulate_with_deflator(model, &f, i)?;
            let d = l.terminal_discount();
            Ok((claim.payoff(&prices)? * d, asset.payoff(&prices)? * d))
        })?;
        let h: Vec<f64> = per_path.iter().map(|r| r.0).collect();
        let u: Vec<f64> = per_path.iter().map(|r| r.1).collect();
        rows.push(CallDecayRow {
            horizon: t,
            h_hat: Estimate::from_samples(&h),
            underlying: Estimate::from_samples(&u),
            envelope: call_envelope(z0, model.n(), p, eps, delta, t),
        });
    }
    let below_underlying = rows.iter().all(|r| r.h_hat.mean < x1_0);
    let nonincreasing = rows.windows(2).all(|w| {
        let se = (w[0].h_hat.std_err.powi(2) + w[1].h_hat.std_err.powi(2)).sqrt();
        w[1].h_hat.mean <= w[0].h_hat.mean + 3.0 * se
    });
    let within_envelope = rows
        .iter()
        .all(|r| r.underlying.mean <= r.envelope + 3.0 * r.underlying.std_err);
    Ok(CallDecayStudy {
        strike,
        x1_0,
        rows,
        below_underlying,
        nonincreasing,
        within_envelope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityGap {
    /// Estimate of `h_1 - h_2 = E[L(T) (Xi_1(T) - Xi_2(T)) / B(T)]`.
    pub gap: Estimate,
    /// `Xi_1(0) - Xi_2(0)`.
    pub initial_gap: f64,
    pub h1: Estimate,
    pub h2: Estimate,
}

impl ParityGap {
    /// `(gap - initial_gap) / std_err`.
    pub fn sigmas(&self) -> f64 {
        self.gap.z_score(self.initial_gap)
    }
}

/// Prices both exchange options on `(xi1, xi2)` and compares their difference
/// with the difference of the starting values.
pub fn put_call_parity_gap(
    model: &MarketModel,
    xi1: &Underlying,
    xi2: &Underlying,
    factors: &FactorPaths,
) -> Result<ParityGap> {
    xi1.check(model.n())?;
    xi2.check(model.n())?;
    let rows = map_paths(factors.n_paths(), |i| {
        let (prices, l) = simulate_with_deflator(model, factors, i)?;
        let d = l.terminal_discount();
        let (a, b) = (xi1.terminal(&prices)?, xi2.terminal(&prices)?);
        Ok(((a - b).max(0.0) * d, (b - a).max(0.0) * d, (a - b) * d))
    })?;
    let col = |j: usize| -> Vec<f64> {
        rows.iter()
            .map(|r| match j {
                0 => r.0,
                1 => r.1,
                _ => r.2,
            })
            .collect()
    };
    Ok(ParityGap {
        gap: Estimate::from_samples(&col(2)),
        initial_gap: xi1.initial(model) - xi2.initial(model),
        h1: Estimate::from_samples(&col(0)),
        h2: Estimate::from_samples(&col(1)),
    })
}

/// `theta` for constant coefficients, straight from `sigma`.
pub fn constant_theta(sigma: &DMatrix<f64>, b: &[f64], r: f64) -> Result<Vec<f64>> {
    theta_from_returns(&VolatilityMatrix::new(sigma)?, b, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markets::{constant_coefficient_market, diverse_market};
    use crate::paths::generate_factors;
    use crate::portfolios::MarketRule;

    fn gbm2() -> MarketModel {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sigma = DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, s]);
        constant_coefficient_market(&[0.1, 0.0], &sigma, &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn theta_examples() {
        let th = market_price_of_risk(&gbm2(), 0.0, &[1.0, 1.0]).unwrap();
        assert!((th[0] - 0.1 * 2f64.sqrt()).abs() < 1e-14);
        assert!(th[1].abs() < 1e-15);
        let th = constant_theta(&DMatrix::identity(2, 2), &[0.03, 0.03], 0.03).unwrap();
        assert_eq!(th, vec![0.0, 0.0]);
    }

    #[test]
    fn theta_with_extra_factors() {
        let sigma = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 0.5]);
        let b = [0.2, -0.1];
        let th = constant_theta(&sigma, &b, 0.0).unwrap();
        // sigma theta recovers b - r
        for i in 0..2 {
            let s: f64 = (0..3).map(|nu| sigma[(i, nu)] * th[nu]).sum();
            assert!((s - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_theta_gives_unit_deflator() {
        let m = constant_coefficient_market(&[0.5, 0.5], &DMatrix::identity(2, 2), &[1.0, 2.0])
            .unwrap()
            .with_short_rate(0.5)
            .unwrap();
        let f = generate_factors(PathGrid::uniform(1.0, 50).unwrap(), 2, 1, 0).unwrap();
        let (p, l) = simulate_with_deflator(&m, &f, 0).unwrap();
        assert!((0..=50).all(|k| l.l(k) == 1.0));
        let l2 = deflator_path(&m, &p, &f).unwrap();
        assert_eq!(l2.terminal_l(), 0.0);
        assert!((l.terminal_discount() - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn deflator_follows_its_recursion() {
        let m = gbm2();
        let f = generate_factors(PathGrid::uniform(1.0, 20).unwrap(), 2, 1, 3).unwrap();
        let (_, l) = simulate_with_deflator(&m, &f, 0).unwrap();
        let inc = f.increments(0).unwrap();
        let th = 0.1 * 2f64.sqrt();
        let want: f64 = (0..20).map(|k| -th * inc[2 * k] - 0.5 * th * th * 0.05).sum();
        assert!((l.terminal_l() - want).abs() < 1e-13);
    }

    #[test]
    fn black_scholes_values() {
        // at-the-money, r = 0: s (2 Phi(vol sqrt(T) / 2) - 1)
        let v = black_scholes_call(1.0, 1.0, 0.0, 0.2, 1.0).unwrap();
        assert!((v - 0.07965567455405798).abs() < 1e-12);
        assert_eq!(black_scholes_call(1.0, 0.0, 0.0, 0.2, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn zero_claim_is_free() {
        let f = generate_factors(PathGrid::uniform(1.0, 10).unwrap(), 2, 100, 1).unwrap();
        let claim = ClaimSpec::Custom {
            name: "zero".into(),
            payoff: Arc::new(|_| 0.0),
        };
        let h = hedge_price(&gbm2(), &claim, &f).unwrap();
        assert_eq!((h.price.mean, h.price.std_err, h.nonzero_payoffs), (0.0, 0.0, 0));
    }

    #[test]
    fn gbm_call_matches_closed_form() {
        let m = gbm2();
        let f = generate_factors(PathGrid::uniform(1.0, 20).unwrap(), 2, 20_000, 8).unwrap();
        let h = hedge_price(&m, &ClaimSpec::call_on_stock(0, 1.0), &f).unwrap();
        let bs = black_scholes_call(1.0, 1.0, 0.0, std::f64::consts::FRAC_1_SQRT_2, 1.0).unwrap();
        assert!(h.price.z_score(bs).abs() < 3.0, "{h:?} vs {bs}");
        assert!(h.deflator.z_score(1.0).abs() < 3.0);
    }

    #[test]
    fn market_value_prices_at_par() {
        let m = gbm2();
        let f = generate_factors(PathGrid::uniform(1.0, 20).unwrap(), 2, 20_000, 9).unwrap();
        let h = hedge_price(&m, &ClaimSpec::Asset(Underlying::Market), &f).unwrap();
        assert!(h.price.z_score(2.0).abs() < 3.0, "{h:?}");
        let d = deflated_portfolio_value(&m, &MarketRule, &f).unwrap();
        assert!(d.mean <= 1.0 + 3.0 * d.std_err);
    }

    #[test]
    fn parity_identical_assets() {
        let f = generate_factors(PathGrid::uniform(1.0, 10).unwrap(), 2, 50, 1).unwrap();
        let g = put_call_parity_gap(&gbm2(), &Underlying::Stock(1), &Underlying::Stock(1), &f)
            .unwrap();
        assert_eq!((g.gap.mean, g.initial_gap, g.h1.mean, g.h2.mean), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn envelope_value() {
        let e = call_envelope(2.0, 2, 0.5, 1.0, 0.1, 60.0);
        assert!((e - 0.8925206405937193).abs() < 1e-14);
    }

    #[test]
    fn call_decay_requires_rate_and_delta() {
        let d = diverse_market(&DMatrix::identity(2, 2), &[0.0; 2], 0.3, 1.0, &[1.0, 1.0]).unwrap();
        assert!(call_decay_study(&d, 1.0, &[1.0], 0.1, 10, 0, 0.5).is_err());
        assert!(call_decay_study(&gbm2().with_short_rate(0.05).unwrap(), 1.0, &[1.0], 0.1, 10, 0, 0.5).is_err());
        let d = d.with_short_rate(0.05).unwrap();
        let s = call_decay_study(&d, 1.0, &[1.0, 2.0], 0.01, 200, 0, 0.5).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.below_underlying);
    }
}
