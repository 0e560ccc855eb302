//! Diversity diagnostics: the measure `D`, per-path diversity reports, the
//! hypothesis check for diversity-enforcing drifts, and the scale function.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::markets::{MarketModel, PricePath};
use crate::numeric::{adaptive_simpson, trapezoid};
use crate::paths::PathGrid;
use crate::ranks::rank_order;

/// `D_p(x) = (sum x_i^p)^(1/p)`.
pub fn diversity_measure(x: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("p must lie in (0, 1], got {p}")));
    }
    if x.is_empty() || x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("weights must be nonnegative"));
    }
    Ok(x.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// `log D_p` computed from log prices: `(1/p) lse(p l) - lse(l)`.
pub fn log_diversity_from_log_prices(log_x: &[f64], p: f64) -> f64 {
    let scaled: Vec<f64> = log_x.iter().map(|l| p * l).collect();
    crate::numeric::log_sum_exp(&scaled) / p - crate::numeric::log_sum_exp(log_x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub max_leader: f64,
    /// Trapezoidal time average of the largest weight over `[0, T]`.
    pub avg_leader: f64,
    pub diverse: bool,
    pub weakly_diverse: bool,
    /// `1 - max_t mu_(1)`.
    pub delta_max: f64,
    /// `1 - avg mu_(1)`.
    pub delta_avg: f64,
    /// Averages over `[T/2, T]`, `[T/4, T]`, ...
    pub window_averages: Vec<f64>,
    /// Largest trailing-window average; a finite stand-in for the limsup.
    pub asymptotic_proxy: f64,
    pub asymptotically_weakly_diverse: bool,
}

/// Diversity flags for a sampled path of the largest weight.
pub fn check_diversity(grid: &PathGrid, leader: &[f64], delta: f64) -> Result<DiversityReport> {
    if leader.len() != grid.n_steps() + 1 {
        return Err(invalid("leader series does not match the grid"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    let ts = grid.times();
    let horizon = grid.horizon();
    let max_leader = leader.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg_leader = trapezoid(ts, leader) / horizon;
    let mut window_averages = Vec::new();
    let mut start = 0.5 * horizon;
    let mut last = usize::MAX;
    while window_averages.len() < 64 {
        // first grid point at or after the window start
        let k0 = ts.partition_point(|t| *t < start);
        if k0 == last {
            break;
        }
        if k0 < ts.len() - 1 {
            let span = horizon - ts[k0];
            window_averages.push(trapezoid(&ts[k0..], &leader[k0..]) / span);
        }
        last = k0;
        start *= 0.5;
    }
    let asymptotic_proxy = window_averages
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DiversityReport {
        max_leader,
        avg_leader,
        diverse: max_leader < 1.0 - delta,
        weakly_diverse: avg_leader < 1.0 - delta,
        delta_max: 1.0 - max_leader,
        delta_avg: 1.0 - avg_leader,
        asymptotically_weakly_diverse: asymptotic_proxy < 1.0 - delta,
        window_averages,
        asymptotic_proxy,
    })
}

pub fn check_path_diversity(path: &PricePath, delta: f64) -> Result<DiversityReport> {
    check_diversity(path.grid(), &path.leader_weights(), delta)
}

/// First grid times at which the leader drops to 1/2 or reaches `1 - delta`,
/// and the grid integral of `Q^-2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingDiagnostics {
    pub first_at_most_half: Option<f64>,
    pub first_at_barrier: Option<f64>,
    /// Infinite if the barrier is reached on the grid.
    pub q_inverse_square_integral: f64,
}

pub fn stopping_diagnostics(path: &PricePath, delta: f64) -> StoppingDiagnostics {
    let lead = path.leader_weights();
    let ts = path.grid().times();
    let first = |f: &dyn Fn(f64) -> bool| lead.iter().position(|m| f(*m)).map(|k| ts[k]);
    let q2: Vec<f64> = lead
        .iter()
        .map(|m| {
            let q = ((1.0 - delta) / m).ln();
            if q > 0.0 {
                q.powi(-2)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    StoppingDiagnostics {
        first_at_most_half: first(&|m| m <= 0.5),
        first_at_barrier: first(&|m| m >= 1.0 - delta),
        q_inverse_square_integral: trapezoid(ts, &q2),
    }
}

/// Hypothesis evaluation at one grid point with `1/2 <= mu_(1) < 1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisPoint {
    pub step: usize,
    /// Every other stock grows at a nonnegative rate, the leader at a nonpositive one.
    pub sign_condition: bool,
    /// `min_{k>=2} gamma_(k) - gamma_(1) + eps/2 >= M / (delta Q)`.
    pub pole_condition: bool,
    /// Left side minus right side of the pole condition.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub points: Vec<HypothesisPoint>,
    pub all_hold: bool,
    pub min_margin: f64,
}

/// Checks the sufficient drift conditions for diversity along a path, using
/// `(eps, M)` from the model's covariance certificate and the growth rates the
/// integrator applied at each grid point.
pub fn theorem61_hypothesis_check(
    model: &MarketModel,
    path: &PricePath,
    delta: f64,
) -> Result<HypothesisReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    let (eps, big_m) = model.vol().certificate();
    let n = path.n();
    let mut mu = vec![0.0; n];
    let mut points = Vec::new();
    for k in 0..path.n_steps() {
        path.weights(k, &mut mu);
        let order = rank_order(path.log_prices(k));
        let lead = mu[order[0]];
        if !(lead >= 0.5 && lead < 1.0 - delta) {
            continue;
        }
        let g = path.growth(k);
        let g1 = g[order[0]];
        let rest_min = order[1..]
            .iter()
            .map(|&i| g[i])
            .fold(f64::INFINITY, f64::min);
        let q = ((1.0 - delta) / lead).ln();
        let margin = rest_min - g1 + 0.5 * eps - big_m / (delta * q);
        points.push(HypothesisPoint {
            step: k,
            sign_condition: rest_min >= 0.0 && g1 <= 0.0,
            pole_condition: margin >= 0.0,
            margin,
        });
    }
    let all_hold = points.iter().all(|p| p.sign_condition && p.pole_condition);
    let min_margin = points.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min);
    Ok(HypothesisReport {
        points,
        all_hold,
        min_margin,
    })
}

/// `U(x) = int_1^x exp(-int_1^y F(z) dz) dy`, evaluated in log coordinates:
/// `U(x) = int_0^{log x} exp(s - G(s)) ds` with `G(s) = int_0^s F(e^u) e^u du`.
pub fn scale_function<F: Fn(f64) -> f64>(f: F, x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(invalid("x must be positive"));
    }
    let end = x.ln();
    if end == 0.0 {
        return Ok(0.0);
    }
    let inner = |u: f64| f(u.exp()) * u.exp();
    let outer = |s: f64| match adaptive_simpson(&inner, 0.0, s, 1e-13) {
        Ok(g) => (s - g).exp(),
        Err(_) => f64::NAN,
    };
    adaptive_simpson(&outer, 0.0, end, 1e-11)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markets::{constant_coefficient_market, diverse_market, integrate_log_euler};
    use crate::paths::{generate_factors, make_grid};
    use nalgebra::DMatrix;

    #[test]
    fn measure_values() {
        assert_eq!(diversity_measure(&[0.0, 1.0, 0.0], 0.5).unwrap(), 1.0);
        let d = diversity_measure(&[0.25, 0.75], 0.5).unwrap();
        assert!((d - 1.8660254037844386).abs() < 1e-14);
        let u = diversity_measure(&[0.25; 4], 0.5).unwrap();
        assert!((u - 4.0).abs() < 1e-14);
        assert!(diversity_measure(&[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn log_measure_from_prices() {
        let lx = [0.1f64, 1.3, -0.4];
        let x: Vec<f64> = lx.iter().map(|l| l.exp()).collect();
        let s: f64 = x.iter().sum();
        let mu: Vec<f64> = x.iter().map(|v| v / s).collect();
        let d = diversity_measure(&mu, 0.3).unwrap().ln();
        assert!((log_diversity_from_log_prices(&lx, 0.3) - d).abs() < 1e-13);
    }

    #[test]
    fn constant_weights_report() {
        let g = make_grid(1.0, 10).unwrap();
        let r = check_diversity(&g, &[0.6; 11], 0.3).unwrap();
        assert!(r.diverse && r.weakly_diverse && r.asymptotically_weakly_diverse);
        assert!((r.delta_avg - 0.4).abs() < 1e-15);
        assert_eq!(r.window_averages.len(), 4);
    }

    #[test]
    fn weak_but_not_strong() {
        let g = make_grid(1.0, 100).unwrap();
        let mut lead = vec![0.5; 101];
        lead[50] = 0.95;
        let r = check_diversity(&g, &lead, 0.3).unwrap();
        assert!(!r.diverse && r.weakly_diverse);
        assert!(r.delta_avg >= r.delta_max);
    }

    #[test]
    fn diverse_model_satisfies_hypotheses_with_margin() {
        let m = diverse_market(&DMatrix::identity(2, 2), &[0.0; 2], 0.25, 1.0, &[1.0, 1.0])
            .unwrap();
        let f = generate_factors(make_grid(2.0, 2000).unwrap(), 2, 1, 1).unwrap();
        let p = integrate_log_euler(&m, &f, 0).unwrap();
        let r = theorem61_hypothesis_check(&m, &p, 0.25).unwrap();
        assert!(!r.points.is_empty());
        assert!(r.all_hold);
        assert!((r.min_margin - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_drift_violates_pole_condition() {
        let m = constant_coefficient_market(&[0.5, 0.5], &DMatrix::identity(2, 2), &[1.0, 1.0])
            .unwrap();
        let f = generate_factors(make_grid(1.0, 1000).unwrap(), 2, 1, 2).unwrap();
        let p = integrate_log_euler(&m, &f, 0).unwrap();
        let r = theorem61_hypothesis_check(&m, &p, 0.25).unwrap();
        assert!(!r.all_hold);
    }

    #[test]
    fn scale_function_cases() {
        let e = std::f64::consts::E;
        assert!((scale_function(|z| 1.0 / z, e).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(scale_function(|z| 1.0 / z, 1.0).unwrap(), 0.0);
        assert!((scale_function(|_| 0.0, 3.0).unwrap() - 2.0).abs() < 1e-8);
        for x in [1e-2, 1e-4, 1e-6] {
            let u = scale_function(|z| 1.0 / z, x).unwrap();
            assert!((u - f64::ln(x)).abs() < 1e-6);
        }
        assert!(scale_function(|z| 1.0 / z, 0.0).is_err());
    }

    #[test]
    fn scale_function_reports_failure() {
        assert!(scale_function(|z| 1.0 / (z - 2.0).powi(2), 3.0).is_err());
    }
}
