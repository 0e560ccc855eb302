//! Market models and log-price integration.
//!
//! Every model is a growth-rate rule `gamma(t, X, state)` plus a constant
//! volatility matrix. Prices are integrated in log space,
//! `log X(t_{k+1}) = log X(t_k) + gamma dt + sigma dW`, so they stay positive.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::numeric::softmax;
use crate::paths::{FactorPaths, PathGrid};

/// Lower clamp on the log-distance to the diversity barrier.
pub const Q_FLOOR: f64 = 1e-8;

/// Constant volatility matrix `sigma` (n x m) with covariance `a = sigma sigma^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityMatrix {
    n: usize,
    m: usize,
    sigma: Vec<f64>,
    a: Vec<f64>,
    epsilon: f64,
    big_m: f64,
}

impl VolatilityMatrix {
    /// Checked constructor: `a` must be uniformly elliptic.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let v = Self::unchecked(sigma)?;
        if v.m < v.n {
            return Err(Error::InvalidModel(format!(
                "need at least as many factors as stocks, got n={} m={}",
                v.n, v.m
            )));
        }
        let scale = v.big_m.abs().max(1.0);
        if !(v.epsilon > 1e-12 * scale) {
            return Err(Error::InvalidModel(format!(
                "covariance is singular or indefinite (smallest eigenvalue {:e})",
                v.epsilon
            )));
        }
        Ok(v)
    }

    /// No ellipticity check; meant for degenerate probes such as `sigma = 0`.
    pub fn unchecked(sigma: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = sigma.shape();
        if n == 0 || m == 0 {
            return Err(invalid("volatility matrix is empty"));
        }
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("volatility has non-finite entries".into()));
        }
        let a_mat = sigma * sigma.transpose();
        let eig = SymmetricEigen::new(a_mat.clone()).eigenvalues;
        let epsilon = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let big_m = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = vec![0.0; n * m];
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..m {
                s[i * m + j] = sigma[(i, j)];
            }
            for j in 0..n {
                a[i * n + j] = a_mat[(i, j)];
            }
        }
        Ok(Self {
            n,
            m,
            sigma: s,
            a,
            epsilon,
            big_m,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(&DMatrix::identity(n, n))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(&DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            diag,
        )))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `sigma[(i, nu)]`.
    pub fn sigma(&self, i: usize, nu: usize) -> f64 {
        self.sigma[i * self.m + nu]
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.m, &self.sigma)
    }

    /// Row-major `a`.
    pub fn cov(&self) -> &[f64] {
        &self.a
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.a)
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// Extreme eigenvalues `(epsilon, M)` of `a`.
    pub fn certificate(&self) -> (f64, f64) {
        (self.epsilon, self.big_m)
    }

    /// Whether `eps <= xi^T a xi <= big_m` for every unit `xi`.
    pub fn satisfies(&self, eps: f64, big_m: f64) -> bool {
        let tol = 1e-12 * self.big_m.abs().max(1.0);
        eps > 0.0 && eps <= self.epsilon + tol && self.big_m <= big_m + tol
    }

    /// `out = sigma * dw`.
    pub fn apply(&self, dw: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.sigma[i * self.m..(i + 1) * self.m];
            *o = row.iter().zip(dw).map(|(s, w)| s * w).sum();
        }
    }
}

/// Parameters of the diversity-enforcing drift.
///
/// The current leader gets growth rate `-(M / delta) / Q` with
/// `Q = log((1 - delta) / mu_(1))`; every other stock `i` grows at `g_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiverseDrift {
    pub g: Vec<f64>,
    pub delta: f64,
    pub m_bound: f64,
}

impl DiverseDrift {
    fn fill(&self, log_x: &[f64], out: &mut [f64]) -> bool {
        let (leader, lw) = leader_log_weight(log_x);
        let q_raw = (1.0 - self.delta).ln() - lw;
        let clamped = !(q_raw >= Q_FLOOR);
        let q = if clamped { Q_FLOOR } else { q_raw };
        out.copy_from_slice(&self.g);
        out[leader] = -(self.m_bound / self.delta) / q;
        clamped
    }
}

/// Parameters of the two-stock model with a drift that is singular at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceDrift {
    pub alpha: f64,
    pub eta: f64,
    pub eta_prime: f64,
    pub c: f64,
}

impl DominanceDrift {
    /// Confining drift on `(-eta, eta)`: `+inf` at `-eta`, `-inf` at `eta`.
    pub fn confining(&self, y: f64) -> f64 {
        let up = (self.eta + y).max(Q_FLOOR);
        let down = (self.eta - y).max(Q_FLOOR);
        self.c * (1.0 / up - 1.0 / down)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    /// Constant growth rates.
    Constant(Vec<f64>),
    Diverse(DiverseDrift),
    /// Two stocks, `b_1 = 0`, `b_2 = -alpha Z 1{t >= switch_time}`, `Z = log(X_2/X_1)`.
    OrnsteinUhlenbeck { alpha: f64, switch_time: f64 },
    /// Diverse drift switched on at the first time the leader reaches
    /// `1 - eta`, provided that happens by `horizon / 2`; `b = 0` otherwise.
    Patched {
        base: DiverseDrift,
        eta: f64,
        horizon: f64,
    },
    InstantaneousDominance(DominanceDrift),
}

/// Per-path bookkeeping carried through integration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathState {
    /// Grid points (after t = 0) at or beyond the model's barrier.
    pub breaches: usize,
    pub first_breach: Option<usize>,
    /// Steps on which the barrier distance hit [`Q_FLOOR`].
    pub clamped_steps: usize,
    /// Patched model: step index of `S`. Dominance model: step index of `T_1`.
    pub stopping_step: Option<usize>,
    /// Patched model: whether the base drift is switched on.
    pub drift_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    drift: Drift,
    vol: Arc<VolatilityMatrix>,
    x0: Vec<f64>,
    short_rate: f64,
}

fn check_x0(x0: &[f64], n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(invalid(format!(
            "expected {n} initial prices, got {}",
            x0.len()
        )));
    }
    if x0.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidInitialCondition(
            "initial prices must be positive".into(),
        ));
    }
    Ok(())
}

/// Model with constant rates of return `b` and `gamma_i = b_i - a_ii / 2`.
pub fn constant_coefficient_market(
    b: &[f64],
    sigma: &DMatrix<f64>,
    x0: &[f64],
) -> Result<MarketModel> {
    let vol = VolatilityMatrix::new(sigma)?;
    let n = vol.n();
    if n < 2 {
        return Err(Error::InvalidModel("need at least two stocks".into()));
    }
    if b.len() != n || b.iter().any(|x| !x.is_finite()) {
        return Err(invalid("rates of return must be n finite numbers"));
    }
    check_x0(x0, n)?;
    let gamma = (0..n).map(|i| b[i] - 0.5 * vol.a(i, i)).collect();
    Ok(MarketModel {
        drift: Drift::Constant(gamma),
        vol: Arc::new(vol),
        x0: x0.to_vec(),
        short_rate: 0.0,
    })
}

/// Market whose leader is pushed away from `1 - delta` by a log-pole drift.
pub fn diverse_market(
    sigma: &DMatrix<f64>,
    g: &[f64],
    delta: f64,
    m_bound: f64,
    x0: &[f64],
) -> Result<MarketModel> {
    let vol = VolatilityMatrix::new(sigma)?;
    let n = vol.n();
    if n < 2 {
        return Err(Error::InvalidModel("need at least two stocks".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(m_bound.is_finite() && m_bound > 0.0) {
        return Err(invalid("M must be positive"));
    }
    if g.len() != n || g.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(invalid("g must be n nonnegative numbers"));
    }
    check_x0(x0, n)?;
    let log_x: Vec<f64> = x0.iter().map(|x| x.ln()).collect();
    let (_, lw) = leader_log_weight(&log_x);
    if lw.exp() >= 1.0 - delta {
        return Err(Error::InvalidInitialCondition(format!(
            "largest initial weight {} must be below 1 - delta = {}",
            lw.exp(),
            1.0 - delta
        )));
    }
    Ok(MarketModel {
        drift: Drift::Diverse(DiverseDrift {
            g: g.to_vec(),
            delta,
            m_bound,
        }),
        vol: Arc::new(vol),
        x0: x0.to_vec(),
        short_rate: 0.0,
    })
}

/// Two-stock model with `sigma = diag(1/sqrt 2, 1/sqrt 2)` whose log-ratio
/// becomes mean reverting at `switch_time`.
pub fn ou_two_stock(alpha: f64, x0: f64, switch_time: f64) -> Result<MarketModel> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid("alpha must be positive"));
    }
    if !(switch_time.is_finite() && switch_time >= 0.0) {
        return Err(invalid("switch time must be nonnegative"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let vol = VolatilityMatrix::diagonal(&[s, s])?;
    check_x0(&[x0, x0], 2)?;
    Ok(MarketModel {
        drift: Drift::OrnsteinUhlenbeck { alpha, switch_time },
        vol: Arc::new(vol),
        x0: vec![x0, x0],
        short_rate: 0.0,
    })
}

/// Diverse base model whose drift only switches on for paths where the leader
/// reaches `1 - eta` by `horizon / 2`.
pub fn patched_weakly_diverse(base: &MarketModel, eta: f64, horizon: f64) -> Result<MarketModel> {
    let Drift::Diverse(d) = &base.drift else {
        return Err(invalid("patched model needs a diverse base model"));
    };
    if !(eta > d.delta && eta < 0.5) {
        return Err(invalid(format!(
            "need base delta < eta < 1/2, got delta={} eta={eta}",
            d.delta
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    Ok(MarketModel {
        drift: Drift::Patched {
            base: d.clone(),
            eta,
            horizon,
        },
        vol: base.vol.clone(),
        x0: base.x0.clone(),
        short_rate: base.short_rate,
    })
}

/// Two stocks with `log X_1 = W_1`, `log X_2 = Gamma(t) + W_2`, where
/// `Gamma' = alpha t^(alpha - 1)` until `Y = log(X_2/X_1)` leaves
/// `(-eta', eta')`, and a confining drift afterwards.
pub fn instantaneous_dominance_market(
    alpha: f64,
    eta: f64,
    eta_prime: f64,
    c: f64,
) -> Result<MarketModel> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid("alpha must lie in (0, 1/2)"));
    }
    if !(eta_prime > 0.0 && eta_prime < eta && eta.is_finite()) {
        return Err(invalid("need 0 < eta' < eta"));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(invalid("c must be positive"));
    }
    Ok(MarketModel {
        drift: Drift::InstantaneousDominance(DominanceDrift {
            alpha,
            eta,
            eta_prime,
            c,
        }),
        vol: Arc::new(VolatilityMatrix::identity(2)?),
        x0: vec![1.0, 1.0],
        short_rate: 0.0,
    })
}

/// `(index, log weight)` of the largest stock, lowest index on ties.
pub fn leader_log_weight(log_x: &[f64]) -> (usize, f64) {
    let mut leader = 0;
    for (i, &l) in log_x.iter().enumerate().skip(1) {
        if l > log_x[leader] {
            leader = i;
        }
    }
    let max = log_x[leader];
    let s: f64 = log_x.iter().map(|l| (l - max).exp()).sum();
    (leader, -s.ln())
}

impl MarketModel {
    /// Skips every validation; for degenerate probes (e.g. `sigma = 0`).
    pub fn degenerate(gamma: Vec<f64>, vol: VolatilityMatrix, x0: Vec<f64>) -> Self {
        Self {
            drift: Drift::Constant(gamma),
            vol: Arc::new(vol),
            x0,
            short_rate: 0.0,
        }
    }

    pub fn with_short_rate(mut self, r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid("short rate must be nonnegative"));
        }
        self.short_rate = r;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.vol.n()
    }

    pub fn m(&self) -> usize {
        self.vol.m()
    }

    pub fn vol(&self) -> &VolatilityMatrix {
        &self.vol
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn short_rate(&self) -> f64 {
        self.short_rate
    }

    /// The diversity parameter a model guarantees by construction.
    pub fn guaranteed_delta(&self) -> Option<f64> {
        match &self.drift {
            Drift::Diverse(d) => Some(d.delta),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.drift {
            Drift::Constant(_) => "constant",
            Drift::Diverse(_) => "diverse",
            Drift::OrnsteinUhlenbeck { .. } => "ou-two-stock",
            Drift::Patched { .. } => "patched",
            Drift::InstantaneousDominance(_) => "instantaneous-dominance",
        }
    }

    fn zero_return_growth(&self, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -0.5 * self.vol.a(i, i);
        }
    }

    /// Growth rates at a single time and state, without updating the state.
    ///
    /// For the dominance model before `T_1` this is the instantaneous rate
    /// `alpha t^(alpha - 1)`, which is infinite at `t = 0`.
    pub fn growth_rates(&self, t: f64, log_x: &[f64], state: &PathState, out: &mut [f64]) {
        match &self.drift {
            Drift::Constant(g) => out.copy_from_slice(g),
            Drift::Diverse(d) => {
                d.fill(log_x, out);
            }
            Drift::OrnsteinUhlenbeck {
                alpha,
                switch_time,
            } => {
                self.zero_return_growth(out);
                if t >= *switch_time {
                    out[1] -= alpha * (log_x[1] - log_x[0]);
                }
            }
            Drift::Patched { base, .. } => {
                if state.drift_active {
                    base.fill(log_x, out);
                } else {
                    self.zero_return_growth(out);
                }
            }
            Drift::InstantaneousDominance(d) => {
                out[0] = 0.0;
                out[1] = if state.stopping_step.is_none() {
                    d.alpha * t.powf(d.alpha - 1.0)
                } else {
                    d.confining(log_x[1] - log_x[0])
                };
            }
        }
    }

    /// Effective growth rates used over step `k`; updates path-dependent state
    /// that is observed at `t_k`.
    fn step_growth(
        &self,
        grid: &PathGrid,
        k: usize,
        log_x: &[f64],
        state: &mut PathState,
        out: &mut [f64],
    ) {
        let t = grid.t(k);
        match &self.drift {
            Drift::Constant(g) => out.copy_from_slice(g),
            Drift::Diverse(d) => {
                if d.fill(log_x, out) {
                    state.clamped_steps += 1;
                }
            }
            Drift::OrnsteinUhlenbeck {
                alpha,
                switch_time,
            } => {
                self.zero_return_growth(out);
                // Grid times are k * dt, so guard the switch against rounding.
                if t >= switch_time - 1e-12 * grid.horizon() {
                    out[1] -= alpha * (log_x[1] - log_x[0]);
                }
            }
            Drift::Patched { base, eta, horizon } => {
                if state.stopping_step.is_none() {
                    let (_, lw) = leader_log_weight(log_x);
                    if lw.exp() >= 1.0 - eta {
                        state.stopping_step = Some(k);
                        state.drift_active = t <= 0.5 * horizon;
                    }
                }
                if state.drift_active {
                    if base.fill(log_x, out) {
                        state.clamped_steps += 1;
                    }
                } else {
                    self.zero_return_growth(out);
                }
            }
            Drift::InstantaneousDominance(d) => {
                out[0] = 0.0;
                out[1] = if state.stopping_step.is_none() {
                    // Exact average of alpha t^(alpha-1) over the step.
                    let t1 = grid.t(k + 1);
                    (t1.powf(d.alpha) - t.powf(d.alpha)) / (t1 - t)
                } else {
                    let y = log_x[1] - log_x[0];
                    if (d.eta + y).min(d.eta - y) <= Q_FLOOR {
                        state.clamped_steps += 1;
                    }
                    d.confining(y)
                };
            }
        }
    }

    /// Bookkeeping at grid point `k >= 1` after a step lands there.
    fn observe(&self, k: usize, log_x: &[f64], state: &mut PathState) {
        let breached = match &self.drift {
            Drift::Diverse(d) => leader_log_weight(log_x).1.exp() >= 1.0 - d.delta,
            Drift::Patched { base, .. } => {
                state.drift_active && leader_log_weight(log_x).1.exp() >= 1.0 - base.delta
            }
            Drift::InstantaneousDominance(d) => {
                let y = log_x[1] - log_x[0];
                if state.stopping_step.is_none() && y.abs() >= d.eta_prime {
                    state.stopping_step = Some(k);
                }
                y.abs() >= d.eta
            }
            _ => false,
        };
        if breached {
            state.breaches += 1;
            state.first_breach.get_or_insert(k);
        }
    }
}

/// One simulated path: log prices at every grid point and the growth rates
/// used on every step.
#[derive(Debug, Clone)]
pub struct PricePath {
    grid: Arc<PathGrid>,
    vol: Arc<VolatilityMatrix>,
    n: usize,
    path_index: usize,
    log_prices: Vec<f64>,
    growth: Vec<f64>,
    state: PathState,
}

impl PricePath {
    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Volatility of the model that produced the path.
    pub fn vol(&self) -> &VolatilityMatrix {
        &self.vol
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn path_index(&self) -> usize {
        self.path_index
    }

    pub fn state(&self) -> &PathState {
        &self.state
    }

    pub fn log_prices(&self, k: usize) -> &[f64] {
        &self.log_prices[k * self.n..(k + 1) * self.n]
    }

    pub fn price(&self, k: usize, i: usize) -> f64 {
        self.log_prices[k * self.n + i].exp()
    }

    pub fn prices(&self, k: usize) -> Vec<f64> {
        self.log_prices(k).iter().map(|l| l.exp()).collect()
    }

    /// Growth rates applied over step `k`.
    pub fn growth(&self, k: usize) -> &[f64] {
        &self.growth[k * self.n..(k + 1) * self.n]
    }

    /// Writes the market weights at `t_k` and returns `log sum X`.
    pub fn weights(&self, k: usize, out: &mut [f64]) -> f64 {
        softmax(self.log_prices(k), out)
    }

    /// Total capitalisation `sum X_i(t_k)`.
    pub fn total_cap(&self, k: usize) -> f64 {
        crate::numeric::log_sum_exp(self.log_prices(k)).exp()
    }

    /// Martingale part `sigma dW` of the log-price step `k`.
    pub fn noise(&self, k: usize, out: &mut [f64]) {
        let dt = self.grid.dt(k);
        let (a, b) = (self.log_prices(k), self.log_prices(k + 1));
        let g = self.growth(k);
        for i in 0..self.n {
            out[i] = b[i] - a[i] - g[i] * dt;
        }
    }

    /// Largest market weight at every grid point.
    pub fn leader_weights(&self) -> Vec<f64> {
        (0..=self.n_steps())
            .map(|k| leader_log_weight(self.log_prices(k)).1.exp())
            .collect()
    }
}

/// Integrates one path with the increments of `factors`.
pub fn integrate_log_euler(
    model: &MarketModel,
    factors: &FactorPaths,
    path_index: usize,
) -> Result<PricePath> {
    if factors.m() != model.m() {
        return Err(invalid(format!(
            "model has {} factors but increments have {}",
            model.m(),
            factors.m()
        )));
    }
    let inc = factors.increments(path_index)?;
    integrate_with_increments(model, factors.shared_grid(), &inc, path_index)
}

/// Integrates one path from explicit increments laid out step-major.
pub fn integrate_with_increments(
    model: &MarketModel,
    grid: Arc<PathGrid>,
    increments: &[f64],
    path_index: usize,
) -> Result<PricePath> {
    let n = model.n();
    let m = model.m();
    let k_max = grid.n_steps();
    if increments.len() != k_max * m {
        return Err(invalid("increments do not match grid and factor count"));
    }
    let mut log_prices = vec![0.0; (k_max + 1) * n];
    let mut growth = vec![0.0; k_max * n];
    for (l, x) in log_prices.iter_mut().zip(&model.x0) {
        *l = x.ln();
    }
    let mut state = PathState::default();
    let mut noise = vec![0.0; n];
    for k in 0..k_max {
        let dt = grid.dt(k);
        let (head, tail) = log_prices.split_at_mut((k + 1) * n);
        let cur = &head[k * n..];
        let g = &mut growth[k * n..(k + 1) * n];
        model.step_growth(&grid, k, cur, &mut state, g);
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::IntegrationFailure {
                path: path_index,
                step: k,
                reason: format!("growth rate of stock {i} is {}", g[i]),
            });
        }
        model.vol.apply(&increments[k * m..(k + 1) * m], &mut noise);
        let next = &mut tail[..n];
        for i in 0..n {
            next[i] = cur[i] + g[i] * dt + noise[i];
        }
        if let Some(i) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::IntegrationFailure {
                path: path_index,
                step: k,
                reason: format!("log price of stock {i} is not finite"),
            });
        }
        model.observe(k + 1, next, &mut state);
    }
    Ok(PricePath {
        grid,
        vol: model.vol.clone(),
        n,
        path_index,
        log_prices,
        growth,
        state,
    })
}
