//! Portfolio rules, their wealth processes, and the quadratic functionals
//! (excess growth, relative covariance) behind them.
//!
//! Wealth is tracked relative to the market: the log of `Z^pi / Z^mu` is
//! integrated step by step and multiplied back by the exact market value
//! `sum X_i`. With `f = pi - mu`, `J` the Jacobian of `f` in log prices,
//! `x` the log-price step and `y = x - gamma dt` its noise part, one step adds
//!
//! ```text
//! f . x + (gamma*_pi - gamma*_mu) dt + 1/2 sum_ij J_ij (y_i y_j - a_ij dt)
//! ```
//!
//! The last term is the second-order correction; [`ValueScheme::Euler`]
//! drops it.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::markets::PricePath;
use crate::numeric::softmax;
use crate::paths::PathGrid;

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortfolioKind {
    AllLong,
    Extended,
}

/// What a rule may look at when choosing weights at `t_k`.
#[derive(Debug, Clone, Copy)]
pub struct MarketState<'a> {
    pub t: f64,
    pub step: usize,
    pub log_prices: &'a [f64],
    pub weights: &'a [f64],
}

pub trait PortfolioRule: Send + Sync {
    fn name(&self) -> String;

    fn kind(&self) -> PortfolioKind;

    fn weights(&self, s: &MarketState<'_>, out: &mut [f64]);

    /// `out[i * n + j] = d pi_i / d log X_j`. Central differences by default.
    fn jacobian(&self, s: &MarketState<'_>, out: &mut [f64]) {
        let n = s.log_prices.len();
        let h = 1e-5;
        let mut lx = s.log_prices.to_vec();
        let mut mu = vec![0.0; n];
        let mut up = vec![0.0; n];
        let mut down = vec![0.0; n];
        for j in 0..n {
            let orig = lx[j];
            for (sign, buf) in [(1.0, &mut up), (-1.0, &mut down)] {
                lx[j] = orig + sign * h;
                softmax(&lx, &mut mu);
                let bumped = MarketState {
                    t: s.t,
                    step: s.step,
                    log_prices: &lx,
                    weights: &mu,
                };
                self.weights(&bumped, buf);
            }
            lx[j] = orig;
            for i in 0..n {
                out[i * n + j] = (up[i] - down[i]) / (2.0 * h);
            }
        }
    }
}

/// Jacobian of the market weights, `diag(mu) - mu mu^T`.
pub fn market_jacobian(mu: &[f64], out: &mut [f64]) {
    let n = mu.len();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = if i == j { mu[i] } else { 0.0 } - mu[i] * mu[j];
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MarketRule;

impl PortfolioRule for MarketRule {
    fn name(&self) -> String {
        "market".into()
    }

    fn kind(&self) -> PortfolioKind {
        PortfolioKind::AllLong
    }

    fn weights(&self, s: &MarketState<'_>, out: &mut [f64]) {
        out.copy_from_slice(s.weights);
    }

    fn jacobian(&self, s: &MarketState<'_>, out: &mut [f64]) {
        market_jacobian(s.weights, out);
    }
}

/// Fixed weights, e.g. `e_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRule {
    w: Vec<f64>,
}

impl ConstantRule {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        check_sum(&w)?;
        Ok(Self { w })
    }

    pub fn unit(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(invalid(format!("unit index {i} out of range for n={n}")));
        }
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Ok(Self { w })
    }
}

impl PortfolioRule for ConstantRule {
    fn name(&self) -> String {
        format!("constant{:?}", self.w)
    }

    fn kind(&self) -> PortfolioKind {
        if self.w.iter().all(|x| *x >= 0.0) {
            PortfolioKind::AllLong
        } else {
            PortfolioKind::Extended
        }
    }

    fn weights(&self, _: &MarketState<'_>, out: &mut [f64]) {
        out.copy_from_slice(&self.w);
    }

    fn jacobian(&self, _: &MarketState<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Weights proportional to `mu_i^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityWeighted {
    p: f64,
}

impl DiversityWeighted {
    pub fn new(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl PortfolioRule for DiversityWeighted {
    fn name(&self) -> String {
        format!("diversity-weighted(p={})", self.p)
    }

    fn kind(&self) -> PortfolioKind {
        PortfolioKind::AllLong
    }

    fn weights(&self, s: &MarketState<'_>, out: &mut [f64]) {
        // mu_i^p / sum mu_j^p = softmax(p log X).
        let scaled: Vec<f64> = s.log_prices.iter().map(|l| self.p * l).collect();
        softmax(&scaled, out);
    }

    fn jacobian(&self, s: &MarketState<'_>, out: &mut [f64]) {
        let n = s.log_prices.len();
        let mut pi = vec![0.0; n];
        self.weights(s, &mut pi);
        market_jacobian(&pi, out);
        for v in out.iter_mut() {
            *v *= self.p;
        }
    }
}

/// `p * base + (1 - p) * mu`.
#[derive(Clone)]
pub struct MirrorRule {
    base: Arc<dyn PortfolioRule>,
    p: f64,
}

impl MirrorRule {
    pub fn new(base: Arc<dyn PortfolioRule>, p: f64) -> Result<Self> {
        if !p.is_finite() || p == 0.0 {
            return Err(invalid("mirror parameter p must be finite and nonzero"));
        }
        Ok(Self { base, p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl PortfolioRule for MirrorRule {
    fn name(&self) -> String {
        format!("mirror(p={}, {})", self.p, self.base.name())
    }

    fn kind(&self) -> PortfolioKind {
        if (0.0..=1.0).contains(&self.p) && self.base.kind() == PortfolioKind::AllLong {
            PortfolioKind::AllLong
        } else {
            PortfolioKind::Extended
        }
    }

    fn weights(&self, s: &MarketState<'_>, out: &mut [f64]) {
        self.base.weights(s, out);
        for (o, m) in out.iter_mut().zip(s.weights) {
            *o = self.p * *o + (1.0 - self.p) * m;
        }
    }

    fn jacobian(&self, s: &MarketState<'_>, out: &mut [f64]) {
        let n = s.weights.len();
        let mut jm = vec![0.0; n * n];
        self.base.jacobian(s, out);
        market_jacobian(s.weights, &mut jm);
        for (o, m) in out.iter_mut().zip(&jm) {
            *o = self.p * *o + (1.0 - self.p) * m;
        }
    }
}

/// `p e_1 + (1 - p) mu`: long the first stock, short the market.
pub fn example_81_pihat(n: usize, p: f64) -> Result<MirrorRule> {
    if !(p > 1.0) {
        return Err(invalid(format!("need p > 1, got {p}")));
    }
    MirrorRule::new(Arc::new(ConstantRule::unit(n, 0)?), p)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

fn check_sum(w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(invalid("weights must be finite"));
    }
    let s: f64 = w.iter().sum();
    let scale = w.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    if (s - 1.0).abs() > SUM_TOL * scale {
        return Err(invalid(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Market weights `X_i / sum X_j`.
pub fn market_portfolio(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("prices must be positive"));
    }
    let s: f64 = x.iter().sum();
    Ok(x.iter().map(|v| v / s).collect())
}

/// Diversity-weighted portfolio `mu_i^p / sum mu_j^p`; `p = 1` returns `mu`.
pub fn diversity_weighted(mu: &[f64], p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    if mu.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(invalid("market weights must be positive"));
    }
    if p == 1.0 {
        return Ok(mu.to_vec());
    }
    let w: Vec<f64> = mu.iter().map(|x| x.powf(p)).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// `p pi + (1 - p) m`.
pub fn mirror_portfolio(pi: &[f64], m: &[f64], p: f64) -> Result<Vec<f64>> {
    if !p.is_finite() || p == 0.0 {
        return Err(invalid("mirror parameter p must be finite and nonzero"));
    }
    if pi.len() != m.len() {
        return Err(invalid("dimension mismatch"));
    }
    check_sum(pi)?;
    check_sum(m)?;
    Ok(pi
        .iter()
        .zip(m)
        .map(|(a, b)| p * a + (1.0 - p) * b)
        .collect())
}

fn check_cov(n: usize, a: &DMatrix<f64>) -> Result<()> {
    if a.shape() != (n, n) {
        return Err(invalid(format!(
            "covariance is {:?}, expected {n}x{n}",
            a.shape()
        )));
    }
    Ok(())
}

fn quad(a: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        s += u[i] * row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    }
    s
}

fn excess_growth_raw(pi: &[f64], a: &[f64]) -> f64 {
    let n = pi.len();
    let diag: f64 = (0..n).map(|i| pi[i] * a[i * n + i]).sum();
    0.5 * (diag - quad(a, pi, pi))
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let (n, m) = a.shape();
    let mut v = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            v.push(a[(i, j)]);
        }
    }
    v
}

/// `gamma*_pi = (sum pi_i a_ii - pi^T a pi) / 2`.
pub fn excess_growth(pi: &[f64], a: &DMatrix<f64>) -> Result<f64> {
    check_cov(pi.len(), a)?;
    Ok(excess_growth_raw(pi, &row_major(a)))
}

/// Covariance of the stocks relative to a baseline portfolio `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeCovariance {
    /// `tau_ij = (e_i - rho)^T a (e_j - rho)`.
    pub tau: DMatrix<f64>,
    /// `(pi - rho)^T a (pi - rho)`.
    pub tau_pipi: f64,
}

pub fn relative_covariance(
    pi: &[f64],
    rho: &[f64],
    a: &DMatrix<f64>,
) -> Result<RelativeCovariance> {
    let n = pi.len();
    if rho.len() != n {
        return Err(invalid("dimension mismatch"));
    }
    check_cov(n, a)?;
    let a_rho: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)] * rho[j]).sum())
        .collect();
    let a_rr: f64 = (0..n).map(|i| rho[i] * a_rho[i]).sum();
    let tau = DMatrix::from_fn(n, n, |i, j| a[(i, j)] - a_rho[i] - a_rho[j] + a_rr);
    let d: Vec<f64> = pi.iter().zip(rho).map(|(x, y)| x - y).collect();
    let tau_pipi = quad(&row_major(a), &d, &d);
    Ok(RelativeCovariance { tau, tau_pipi })
}

/// `|gamma*_pi - (sum pi_i tau_ii - pi^T tau pi) / 2|` with `tau` relative to `rho`.
pub fn numeraire_invariance_residual(pi: &[f64], rho: &[f64], a: &DMatrix<f64>) -> Result<f64> {
    let lhs = excess_growth(pi, a)?;
    let tau = relative_covariance(pi, rho, a)?.tau;
    let rhs = excess_growth(pi, &tau)?;
    Ok((lhs - rhs).abs())
}

/// Residuals of the mirror and relative-covariance identities for one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraicResiduals {
    /// Numeraire invariance of the excess growth rate.
    pub numeraire: f64,
    /// Mirror of a mirror: exponents multiply.
    pub composition: f64,
    /// Mirror with exponent `1/p` undoes exponent `p`.
    pub inversion: f64,
    /// `tau^m m = 0`.
    pub kernel: f64,
    /// `tau^m_pipi = pi^T tau^m pi = tau^pi_mm`.
    pub quadratic: f64,
    /// `tau^m` of the mirror is `p^2 tau^m_pipi`.
    pub scaling: f64,
}

impl AlgebraicResiduals {
    pub fn max_mirror(&self) -> f64 {
        self.composition.max(self.inversion)
    }

    pub fn max_covariance(&self) -> f64 {
        self.kernel.max(self.quadratic).max(self.scaling)
    }
}

fn max_abs_diff(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Evaluates the identities for weights `pi`, baseline `m` (both summing to
/// one), covariance `a` and nonzero exponents `p`, `q`.
pub fn algebraic_residuals(
    pi: &[f64],
    m: &[f64],
    a: &DMatrix<f64>,
    p: f64,
    q: f64,
) -> Result<AlgebraicResiduals> {
    let n = pi.len();
    check_cov(n, a)?;
    let mirror = mirror_portfolio(pi, m, p)?;
    let twice = mirror_portfolio(&mirror, m, q)?;
    let direct = mirror_portfolio(pi, m, p * q)?;
    let back = mirror_portfolio(&mirror, m, 1.0 / p)?;
    let rel = relative_covariance(pi, m, a)?;
    let tau = row_major(&rel.tau);
    let kernel = (0..n)
        .map(|i| (0..n).map(|j| tau[i * n + j] * m[j]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let form = quad(&tau, pi, pi);
    let swapped = relative_covariance(m, pi, a)?.tau_pipi;
    let mirrored = relative_covariance(&mirror, m, a)?.tau_pipi;
    Ok(AlgebraicResiduals {
        numeraire: numeraire_invariance_residual(pi, m, a)?,
        composition: max_abs_diff(&twice, &direct),
        inversion: max_abs_diff(&back, pi),
        kernel,
        quadratic: (rel.tau_pipi - form).abs().max((rel.tau_pipi - swapped).abs()),
        scaling: (mirrored - p * p * rel.tau_pipi).abs(),
    })
}

/// Smallest slacks of the covariance and excess-growth bounds for all-long
/// weights; all are nonnegative when the bounds hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSlacks {
    /// `tau^pi_ii - eps (1 - pi_i)^2`.
    pub own_lower: f64,
    /// `M (1 - pi_i)(2 - pi_i) - tau^pi_ii`.
    pub own_upper: f64,
    /// `tau^mu_(kk) - eps (1 - mu_(1))^2`.
    pub ranked_lower: f64,
    /// `2M - tau^mu_(kk)`.
    pub ranked_upper: f64,
    /// `gamma*_pi - eps (1 - pi_(1)) / 2`.
    pub growth_lower: f64,
    /// `M (1 - pi_(1)) - gamma*_pi`.
    pub growth_upper: f64,
}

impl BoundSlacks {
    pub fn min(&self) -> f64 {
        [
            self.own_lower,
            self.own_upper,
            self.ranked_lower,
            self.ranked_upper,
            self.growth_lower,
            self.growth_upper,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

/// Bounds for all-long `pi` and market weights `mu` under a covariance with
/// eigenvalues in `[eps, big_m]`.
pub fn bound_slacks(
    pi: &[f64],
    mu: &[f64],
    a: &DMatrix<f64>,
    eps: f64,
    big_m: f64,
) -> Result<BoundSlacks> {
    let n = pi.len();
    check_cov(n, a)?;
    if mu.len() != n {
        return Err(invalid("dimension mismatch"));
    }
    check_sum(pi)?;
    check_sum(mu)?;
    if pi.iter().chain(mu).any(|x| *x < 0.0) {
        return Err(invalid("weights must be nonnegative"));
    }
    let tp = relative_covariance(pi, pi, a)?.tau;
    let tm = relative_covariance(mu, mu, a)?.tau;
    let pi_top = pi.iter().copied().fold(0.0, f64::max);
    let mu_top = mu.iter().copied().fold(0.0, f64::max);
    let mut s = BoundSlacks {
        own_lower: f64::INFINITY,
        own_upper: f64::INFINITY,
        ranked_lower: f64::INFINITY,
        ranked_upper: f64::INFINITY,
        growth_lower: 0.0,
        growth_upper: 0.0,
    };
    for i in 0..n {
        let t = tp[(i, i)];
        s.own_lower = s.own_lower.min(t - eps * (1.0 - pi[i]).powi(2));
        s.own_upper = s.own_upper.min(big_m * (1.0 - pi[i]) * (2.0 - pi[i]) - t);
        let u = tm[(i, i)];
        s.ranked_lower = s.ranked_lower.min(u - eps * (1.0 - mu_top).powi(2));
        s.ranked_upper = s.ranked_upper.min(2.0 * big_m - u);
    }
    let g = excess_growth(pi, a)?;
    s.growth_lower = g - 0.5 * eps * (1.0 - pi_top);
    s.growth_upper = big_m * (1.0 - pi_top) - g;
    Ok(s)
}

/// Second-order correction by default; `Euler` is the plain first-order step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueScheme {
    Euler,
    #[default]
    Corrected,
}

/// Wealth of a portfolio along one price path.
#[derive(Debug, Clone)]
pub struct ValuePath {
    grid: Arc<PathGrid>,
    initial: f64,
    /// `log(Z^pi / Z^mu)` normalised to 0 at `t = 0`.
    log_relative: Vec<f64>,
    /// `log(sum X(t_k) / sum X(0))`.
    log_market: Vec<f64>,
    kind: PortfolioKind,
}

impl ValuePath {
    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn kind(&self) -> PortfolioKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.log_relative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_relative.is_empty()
    }

    pub fn log_value(&self, k: usize) -> f64 {
        self.initial.ln() + self.log_relative[k] + self.log_market[k]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.log_value(k).exp()
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.value(k)).collect()
    }

    pub fn terminal(&self) -> f64 {
        self.value(self.len() - 1)
    }

    /// `log((Z^pi(t_k)/z) / (Z^mu(t_k)/Z^mu(0)))`.
    pub fn log_relative(&self) -> &[f64] {
        &self.log_relative
    }
}

/// Per-step diagnostics recorded alongside a value path.
#[derive(Debug, Clone, Default)]
pub struct ValueTrace {
    /// Weights at every step, row-major `K x n`.
    pub weights: Vec<f64>,
    /// `gamma*_pi` at every grid point.
    pub excess_growth: Vec<f64>,
    /// `tau^mu_{pi pi}` at every grid point.
    pub tau_market: Vec<f64>,
}

pub fn portfolio_value(rule: &dyn PortfolioRule, prices: &PricePath, z: f64) -> Result<ValuePath> {
    portfolio_value_with(rule, prices, z, ValueScheme::Corrected, None)
}

/// Full-control version of [`portfolio_value`]; fills `trace` when given.
pub fn portfolio_value_with(
    rule: &dyn PortfolioRule,
    prices: &PricePath,
    z: f64,
    scheme: ValueScheme,
    mut trace: Option<&mut ValueTrace>,
) -> Result<ValuePath> {
    if !(z.is_finite() && z > 0.0) {
        return Err(invalid("initial capital must be positive"));
    }
    let n = prices.n();
    let k_max = prices.n_steps();
    let grid = prices.grid();
    let a = prices.vol().cov();
    let kind = rule.kind();
    let mut mu = vec![0.0; n];
    let mut pi = vec![0.0; n];
    let mut jp = vec![0.0; n * n];
    let mut jm = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    let mut log_relative = Vec::with_capacity(k_max + 1);
    let mut log_market = Vec::with_capacity(k_max + 1);
    let lse0 = prices.weights(0, &mut mu);
    log_relative.push(0.0);
    log_market.push(0.0);
    if let Some(t) = trace.as_deref_mut() {
        *t = ValueTrace::default();
    }
    let mut rel = 0.0;
    for k in 0..k_max {
        let dt = grid.dt(k);
        let lx = prices.log_prices(k);
        let state = MarketState {
            t: grid.t(k),
            step: k,
            log_prices: lx,
            weights: &mu,
        };
        rule.weights(&state, &mut pi);
        validate_step(&pi, kind, prices.path_index(), k)?;
        let g_pi = excess_growth_raw(&pi, a);
        let g_mu = excess_growth_raw(&mu, a);
        let next = prices.log_prices(k + 1);
        let mut inc = (g_pi - g_mu) * dt;
        for i in 0..n {
            inc += (pi[i] - mu[i]) * (next[i] - lx[i]);
        }
        if scheme == ValueScheme::Corrected {
            rule.jacobian(&state, &mut jp);
            market_jacobian(&mu, &mut jm);
            prices.noise(k, &mut y);
            let mut c = 0.0;
            for i in 0..n {
                for j in 0..n {
                    c += (jp[i * n + j] - jm[i * n + j]) * (y[i] * y[j] - a[i * n + j] * dt);
                }
            }
            inc += 0.5 * c;
        }
        if !inc.is_finite() {
            return Err(Error::IntegrationFailure {
                path: prices.path_index(),
                step: k,
                reason: "wealth increment is not finite".into(),
            });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.weights.extend_from_slice(&pi);
            t.excess_growth.push(g_pi);
            let d: Vec<f64> = pi.iter().zip(&mu).map(|(p, m)| p - m).collect();
            t.tau_market.push(quad(a, &d, &d));
        }
        rel += inc;
        let lse = prices.weights(k + 1, &mut mu);
        log_relative.push(rel);
        log_market.push(lse - lse0);
    }
    if let Some(t) = trace {
        // Close the grid-point series with the terminal weights.
        let lx = prices.log_prices(k_max);
        let state = MarketState {
            t: grid.horizon(),
            step: k_max,
            log_prices: lx,
            weights: &mu,
        };
        rule.weights(&state, &mut pi);
        t.excess_growth.push(excess_growth_raw(&pi, a));
        let d: Vec<f64> = pi.iter().zip(&mu).map(|(p, m)| p - m).collect();
        t.tau_market.push(quad(a, &d, &d));
    }
    Ok(ValuePath {
        grid: Arc::new(grid.clone()),
        initial: z,
        log_relative,
        log_market,
        kind,
    })
}

fn validate_step(pi: &[f64], kind: PortfolioKind, path: usize, step: usize) -> Result<()> {
    if pi.iter().any(|x| !x.is_finite()) {
        return Err(Error::IntegrationFailure {
            path,
            step,
            reason: "portfolio weight is not finite".into(),
        });
    }
    let s: f64 = pi.iter().sum();
    let scale = pi.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    if (s - 1.0).abs() > SUM_TOL * scale {
        return Err(Error::IntegrationFailure {
            path,
            step,
            reason: format!("weights sum to {s}"),
        });
    }
    if kind == PortfolioKind::AllLong && pi.iter().any(|x| *x < 0.0) {
        return Err(Error::IntegrationFailure {
            path,
            step,
            reason: "all-long rule emitted a negative weight".into(),
        });
    }
    Ok(())
}

/// Dollar holdings chosen at `t_k` from the current prices and wealth.
pub trait TradingStrategy: Send + Sync {
    fn holdings(&self, s: &MarketState<'_>, prices: &[f64], wealth: f64, out: &mut [f64]);
}

/// Everything in the money market.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHoldings;

impl TradingStrategy for NoHoldings {
    fn holdings(&self, _: &MarketState<'_>, _: &[f64], _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// A fixed number of shares in each stock.
#[derive(Debug, Clone, PartialEq)]
pub struct BuyAndHold {
    pub shares: Vec<f64>,
}

impl TradingStrategy for BuyAndHold {
    fn holdings(&self, _: &MarketState<'_>, prices: &[f64], _: f64, out: &mut [f64]) {
        for ((o, s), x) in out.iter_mut().zip(&self.shares).zip(prices) {
            *o = s * x;
        }
    }
}

/// `phi_i = pi_i Z`.
pub struct PortfolioHoldings<R: PortfolioRule>(pub R);

impl<R: PortfolioRule> TradingStrategy for PortfolioHoldings<R> {
    fn holdings(&self, s: &MarketState<'_>, _: &[f64], wealth: f64, out: &mut [f64]) {
        self.0.weights(s, out);
        for o in out.iter_mut() {
            *o *= wealth;
        }
    }
}

/// Wealth of a general trading strategy with a money-market account.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyValuePath {
    pub values: Vec<f64>,
    /// Wealth stayed nonnegative at every grid point.
    pub admissible: bool,
}

/// Each step earns `sum phi_i (X_i(t_{k+1})/X_i(t_k) - 1)` on the stocks and
/// `e^{r dt} - 1` on the cash balance `Z - sum phi_i`.
pub fn strategy_value(
    strategy: &dyn TradingStrategy,
    prices: &PricePath,
    r: f64,
    z: f64,
) -> Result<StrategyValuePath> {
    if !z.is_finite() {
        return Err(invalid("initial wealth must be finite"));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(invalid("short rate must be nonnegative"));
    }
    let n = prices.n();
    let grid = prices.grid();
    let mut phi = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut values = Vec::with_capacity(prices.n_steps() + 1);
    values.push(z);
    let mut wealth = z;
    for k in 0..prices.n_steps() {
        prices.weights(k, &mut mu);
        let px = prices.prices(k);
        let state = MarketState {
            t: grid.t(k),
            step: k,
            log_prices: prices.log_prices(k),
            weights: &mu,
        };
        strategy.holdings(&state, &px, wealth, &mut phi);
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::IntegrationFailure {
                path: prices.path_index(),
                step: k,
                reason: "holding is not finite".into(),
            });
        }
        let cash = wealth - phi.iter().sum::<f64>();
        let (a, b) = (prices.log_prices(k), prices.log_prices(k + 1));
        let mut gain = cash * (r * grid.dt(k)).exp_m1();
        for i in 0..n {
            gain += phi[i] * (b[i] - a[i]).exp_m1();
        }
        wealth += gain;
        values.push(wealth);
    }
    let admissible = values.iter().all(|v| *v >= 0.0);
    Ok(StrategyValuePath { values, admissible })
}

/// Buy-and-hold mix of `a` dollars in the portfolio `pihat` and `b` dollars
/// in the market, both normalised to start at one dollar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoldMix {
    pub pihat_dollars: f64,
    pub market_dollars: f64,
}

/// One dollar in `pihat` plus `(p - 1)/mu_1(0)^p` dollars in the market.
pub fn example_82_rho(p: f64, mu1_0: f64) -> Result<HoldMix> {
    check_mix_args(p, mu1_0)?;
    Ok(HoldMix {
        pihat_dollars: 1.0,
        market_dollars: (p - 1.0) / mu1_0.powf(p),
    })
}

/// Short one dollar of `pihat`, long `p/mu_1(0)^p` dollars of the market.
pub fn example_83_eta(p: f64, mu1_0: f64) -> Result<HoldMix> {
    check_mix_args(p, mu1_0)?;
    Ok(HoldMix {
        pihat_dollars: -1.0,
        market_dollars: p / mu1_0.powf(p),
    })
}

fn check_mix_args(p: f64, mu1_0: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid(format!("need p > 1, got {p}")));
    }
    if !(mu1_0 > 0.0 && mu1_0 < 1.0) {
        return Err(invalid("mu_1(0) must lie in (0, 1)"));
    }
    Ok(())
}

impl HoldMix {
    pub fn initial_capital(&self) -> f64 {
        self.pihat_dollars + self.market_dollars
    }

    /// `Z^mix / Z^mu` given `Z^pihat / Z^mu` (both started at 1).
    pub fn relative_value(&self, pihat_over_market: f64) -> f64 {
        self.pihat_dollars * pihat_over_market + self.market_dollars
    }

    /// Weights of the mix given the weights of `pihat` and of the market.
    pub fn weights(&self, pihat_over_market: f64, pihat: &[f64], mu: &[f64], out: &mut [f64]) {
        let total = self.relative_value(pihat_over_market);
        for i in 0..out.len() {
            out[i] = (self.pihat_dollars * pihat[i] * pihat_over_market
                + self.market_dollars * mu[i])
                / total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markets::{constant_coefficient_market, integrate_log_euler};
    use crate::paths::{generate_factors, make_grid};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn market_weights() {
        assert_eq!(market_portfolio(&[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(market_portfolio(&[3.0, 1.0]).unwrap(), vec![0.75, 0.25]);
        assert!(market_portfolio(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn diversity_weighted_values() {
        let w = diversity_weighted(&[0.25, 0.25, 0.5], 0.5).unwrap();
        let want = [0.2928932188134524, 0.2928932188134524, 0.41421356237309503];
        assert!(close(&w, &want, 1e-15));
        let mu = [0.2, 0.3, 0.5];
        assert_eq!(diversity_weighted(&mu, 1.0).unwrap(), mu.to_vec());
        assert!(close(&diversity_weighted(&mu, 0.999999).unwrap(), &mu, 1e-6));
        assert!(diversity_weighted(&mu, 0.0).is_err());
        assert!(diversity_weighted(&mu, 1.5).is_err());
    }

    #[test]
    fn mirror_values() {
        let pi = [1.0, 0.0];
        let m = [0.5, 0.5];
        assert_eq!(mirror_portfolio(&pi, &m, 1.0).unwrap(), pi.to_vec());
        assert_eq!(mirror_portfolio(&pi, &m, -1.0).unwrap(), vec![0.0, 1.0]);
        assert!(mirror_portfolio(&pi, &m, 0.0).is_err());
        assert!(mirror_portfolio(&[0.6, 0.6], &m, 2.0).is_err());
    }

    #[test]
    fn excess_growth_values() {
        let a = DMatrix::identity(4, 4);
        assert_eq!(excess_growth(&[0.0, 1.0, 0.0, 0.0], &a).unwrap(), 0.0);
        let u = [0.25; 4];
        assert!((excess_growth(&u, &a).unwrap() - 0.5 * 0.75).abs() < 1e-15);
        assert!(excess_growth(&u, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn relative_covariance_basics() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let r = relative_covariance(&[0.4, 0.6], &[0.4, 0.6], &a).unwrap();
        assert_eq!(r.tau_pipi, 0.0);
        let rho = [0.4, 0.6];
        let v = &r.tau * nalgebra::DVector::from_column_slice(&rho);
        assert!(v.amax() < 1e-15);
        // With rho = pi the invariance reduces to gamma* = sum pi_i tau_ii / 2.
        let pi = [0.3, 0.7];
        let t = relative_covariance(&pi, &pi, &a).unwrap().tau;
        let half: f64 = 0.5 * (pi[0] * t[(0, 0)] + pi[1] * t[(1, 1)]);
        assert!((excess_growth(&pi, &a).unwrap() - half).abs() < 1e-15);
        assert_eq!(
            numeraire_invariance_residual(&pi, &rho, &DMatrix::zeros(2, 2)).unwrap(),
            0.0
        );
    }

    #[test]
    fn pihat_weights() {
        let r = example_81_pihat(3, 4.0).unwrap();
        let lx = [0.0, 1.0, 2.0];
        let mut mu = [0.0; 3];
        softmax(&lx, &mut mu);
        let s = MarketState {
            t: 0.0,
            step: 0,
            log_prices: &lx,
            weights: &mu,
        };
        let mut w = [0.0; 3];
        r.weights(&s, &mut w);
        assert!((w[0] - (4.0 - 3.0 * mu[0])).abs() < 1e-15);
        assert!((w[2] + 3.0 * mu[2]).abs() < 1e-15);
        assert_eq!(r.kind(), PortfolioKind::Extended);
        assert!(example_81_pihat(3, 1.0).is_err());
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        let lx = [0.3, -0.2, 0.9, 0.1];
        let mut mu = [0.0; 4];
        softmax(&lx, &mut mu);
        let s = MarketState {
            t: 0.0,
            step: 0,
            log_prices: &lx,
            weights: &mu,
        };
        let rules: Vec<Box<dyn PortfolioRule>> = vec![
            Box::new(MarketRule),
            Box::new(DiversityWeighted::new(0.4).unwrap()),
            Box::new(example_81_pihat(4, 3.0).unwrap()),
        ];
        for r in rules {
            let mut exact = vec![0.0; 16];
            r.jacobian(&s, &mut exact);
            let mut fd = vec![0.0; 16];
            FdOnly(r.as_ref()).jacobian(&s, &mut fd);
            assert!(close(&exact, &fd, 1e-8), "{}", r.name());
        }
    }

    /// Forwards weights only, so the default finite-difference Jacobian runs.
    struct FdOnly<'a>(&'a dyn PortfolioRule);
    impl PortfolioRule for FdOnly<'_> {
        fn name(&self) -> String {
            self.0.name()
        }
        fn kind(&self) -> PortfolioKind {
            self.0.kind()
        }
        fn weights(&self, s: &MarketState<'_>, out: &mut [f64]) {
            self.0.weights(s, out)
        }
    }

    fn gbm_path(steps: usize, seed: u64) -> PricePath {
        let sigma = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.0, 0.2, 0.1, 0.1, 0.0, 0.25]);
        let m = constant_coefficient_market(&[0.05, 0.1, 0.02], &sigma, &[1.0, 2.0, 3.0]).unwrap();
        let f = generate_factors(make_grid(1.0, steps).unwrap(), 3, 1, seed).unwrap();
        integrate_log_euler(&m, &f, 0).unwrap()
    }

    #[test]
    fn market_rule_reproduces_total_capitalisation() {
        let p = gbm_path(500, 3);
        let v = portfolio_value(&MarketRule, &p, 6.0).unwrap();
        for k in 0..=500 {
            let cap: f64 = p.prices(k).iter().sum();
            assert!((v.value(k) / cap - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_stock_rule_tracks_the_stock() {
        let p = gbm_path(4000, 4);
        let v = portfolio_value(&ConstantRule::unit(3, 0).unwrap(), &p, 1.0).unwrap();
        let err = (v.terminal() - p.price(4000, 0)).abs() / p.price(4000, 0);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn pure_money_market_and_buy_and_hold() {
        let p = gbm_path(100, 5);
        let s = strategy_value(&NoHoldings, &p, 0.05, 2.0).unwrap();
        assert!((s.values[100] - 2.0 * 0.05f64.exp()).abs() < 1e-12);
        let bh = BuyAndHold {
            shares: vec![1.0, 0.0, 0.0],
        };
        let s = strategy_value(&bh, &p, 0.0, 3.0).unwrap();
        for k in [0, 50, 100] {
            assert!((s.values[k] - (3.0 + p.price(k, 0) - 1.0)).abs() < 1e-12);
        }
        assert!(s.admissible);
    }

    #[test]
    fn self_financing_portfolio_matches_value_path() {
        let p = gbm_path(20_000, 6);
        let rule = DiversityWeighted::new(0.5).unwrap();
        let s = strategy_value(&PortfolioHoldings(rule), &p, 0.0, 1.0).unwrap();
        let v = portfolio_value(&rule, &p, 1.0).unwrap();
        assert!((s.values[20_000] / v.terminal() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mirror_identity_is_exact_with_left_point_sums() {
        let p = gbm_path(300, 9);
        let base: Arc<dyn PortfolioRule> = Arc::new(DiversityWeighted::new(0.3).unwrap());
        let mut tr = ValueTrace::default();
        let vb = portfolio_value_with(base.as_ref(), &p, 1.0, ValueScheme::Corrected, Some(&mut tr))
            .unwrap();
        for q in [-1.5, 0.5, 7.0] {
            let vm = portfolio_value(&MirrorRule::new(base.clone(), q).unwrap(), &p, 1.0).unwrap();
            let tau: f64 = (0..300).map(|k| tr.tau_market[k] * p.grid().dt(k)).sum();
            let want = q * vb.log_relative()[300] + 0.5 * q * (1.0 - q) * tau;
            assert!((vm.log_relative()[300] - want).abs() < 1e-11, "p={q}");
        }
    }

    #[test]
    fn mixes_from_examples() {
        let rho = example_82_rho(3.0, 0.5).unwrap();
        assert_eq!(rho.initial_capital(), 17.0);
        let eta = example_83_eta(3.0, 0.5).unwrap();
        assert_eq!(eta.initial_capital(), 23.0);
        assert!(example_82_rho(1.0, 0.5).is_err());
        let mut w = [0.0; 2];
        eta.weights(0.9, &[2.0, -1.0], &[0.5, 0.5], &mut w);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn all_long_rule_with_negative_weight_is_rejected() {
        struct Bad;
        impl PortfolioRule for Bad {
            fn name(&self) -> String {
                "bad".into()
            }
            fn kind(&self) -> PortfolioKind {
                PortfolioKind::AllLong
            }
            fn weights(&self, _: &MarketState<'_>, out: &mut [f64]) {
                out.copy_from_slice(&[1.5, -0.5, 0.0]);
            }
        }
        let p = gbm_path(10, 1);
        assert!(matches!(
            portfolio_value(&Bad, &p, 1.0),
            Err(Error::IntegrationFailure { step: 0, .. })
        ));
    }
}
