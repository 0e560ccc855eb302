//! Ranked market weights, local times of adjacent-rank gaps, and a pathwise
//! check of the ranked log-weight dynamics.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::markets::PricePath;

/// Weights sorted from largest to smallest with the ranking permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedWeights {
    pub sorted: Vec<f64>,
    /// `permutation[k]` is the (zero-based) index of the stock at rank `k`.
    pub permutation: Vec<usize>,
}

/// Indices ordered by decreasing value; equal values keep ascending index.
pub fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx
}

pub fn rank(mu: &[f64]) -> RankedWeights {
    let permutation = rank_order(mu);
    let sorted = permutation.iter().map(|&i| mu[i]).collect();
    RankedWeights {
        sorted,
        permutation,
    }
}

/// Local time at zero accumulated by a nonnegative gap process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimePath {
    pub values: Vec<f64>,
}

impl LocalTimePath {
    pub fn terminal(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    fn from_increments(incs: impl IntoIterator<Item = f64>) -> Self {
        let mut values = vec![0.0];
        let mut raw = 0.0;
        let mut running = 0.0f64;
        for d in incs {
            raw += d;
            running = running.max(raw);
            values.push(running);
        }
        Self { values }
    }
}

/// Tanaka increment of `|u|` over one step: `|u1| - |u0| - sgn(u0) (u1 - u0)`.
///
/// Zero while `u` keeps its sign; when `u` crosses zero it is `2 |u1|`.
pub fn local_time_increment(u0: f64, u1: f64) -> f64 {
    // exact zero without a sign change, rather than a rounding residue
    if (u0 > 0.0 && u1 > 0.0) || (u0 < 0.0 && u1 < 0.0) {
        return 0.0;
    }
    let s = if u0 > 0.0 {
        1.0
    } else if u0 < 0.0 {
        -1.0
    } else {
        0.0
    };
    u1.abs() - u0.abs() - s * (u1 - u0)
}

/// Discrete Tanaka estimate from a sampled nonnegative gap `Y`:
/// `Lambda(t_K) = Y_K - Y_0 - sum 1{Y_k > 0} (Y_{k+1} - Y_k)`.
///
/// The gap alone cannot tell whether the underlying difference changed sign
/// between samples, so for sampled reflected processes this underestimates;
/// use [`signed_local_time`] when the signed process is available.
pub fn estimate_local_time(gap: &[f64]) -> Result<LocalTimePath> {
    if let Some(k) = gap.iter().position(|y| !(y.is_finite() && *y >= 0.0)) {
        return Err(invalid(format!("gap must be nonnegative, got {} at {k}", gap[k])));
    }
    Ok(LocalTimePath::from_increments(
        gap.windows(2).map(|w| local_time_increment(w[0], w[1])),
    ))
}

/// Local time at zero of `|U|` from samples of the signed process `U`.
pub fn signed_local_time(u: &[f64]) -> Result<LocalTimePath> {
    if u.iter().any(|x| !x.is_finite()) {
        return Err(invalid("signed path must be finite"));
    }
    Ok(LocalTimePath::from_increments(
        u.windows(2).map(|w| local_time_increment(w[0], w[1])),
    ))
}

/// Local times `Lambda^{(k,k+1)}` for `k = 1..n-1` along a price path.
///
/// On each step the pair of names holding ranks `k` and `k+1` at the start is
/// followed to the end of the step, so a swap of the two shows up as a sign
/// change of their log-price difference.
pub fn ranked_local_times(path: &PricePath) -> Vec<LocalTimePath> {
    let n = path.n();
    let mut incs = vec![Vec::with_capacity(path.n_steps()); n - 1];
    for j in 0..path.n_steps() {
        let l0 = path.log_prices(j);
        let l1 = path.log_prices(j + 1);
        let order = rank_order(l0);
        for k in 0..n - 1 {
            let (a, b) = (order[k], order[k + 1]);
            incs[k].push(local_time_increment(l0[a] - l0[b], l1[a] - l1[b]));
        }
    }
    incs.into_iter()
        .map(LocalTimePath::from_increments)
        .collect()
}

/// Terminal comparison of `log mu_(k)` with its ranked decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedDecompositionReport {
    /// `log mu_(k)(T) - log mu_(k)(0)` per rank.
    pub lhs: Vec<f64>,
    /// Integrated right-hand side per rank.
    pub rhs: Vec<f64>,
    /// `lhs - rhs` per rank.
    pub residual: Vec<f64>,
    /// `Lambda^{(k,k+1)}(T)` for `k = 1..n-1`.
    pub local_time: Vec<f64>,
    /// Steps on which some adjacent pair swapped.
    pub crossing_steps: usize,
    /// Steps where the leader held more than half the market throughout but
    /// `Lambda^{(1,2)}` still grew.
    pub indicator_violations: usize,
}

/// Integrates the ranked dynamics with the path's own noise and compares them
/// with the realised ranked log-weights.
pub fn verify_ranked_decomposition(path: &PricePath) -> RankedDecompositionReport {
    let n = path.n();
    let a = path.vol().cov();
    let lambdas = ranked_local_times(path);
    let mut rhs = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut mu_next = vec![0.0; n];
    let mut crossing_steps = 0;
    let mut indicator_violations = 0;
    path.weights(0, &mut mu);
    let mu_start = rank(&mu).sorted;
    for j in 0..path.n_steps() {
        let dt = path.grid().dt(j);
        let l0 = path.log_prices(j);
        let l1 = path.log_prices(j + 1);
        path.weights(j + 1, &mut mu_next);
        let order = rank_order(l0);
        if rank_order(l1) != order {
            crossing_steps += 1;
        }
        let mut diag = 0.0;
        let mut quad = 0.0;
        let mut mean_x = 0.0;
        for i in 0..n {
            diag += mu[i] * a[i * n + i];
            for l in 0..n {
                quad += mu[i] * a[i * n + l] * mu[l];
            }
            mean_x += mu[i] * (l1[i] - l0[i]);
        }
        let g_star = 0.5 * (diag - quad);
        for k in 0..n {
            let i = order[k];
            let mut d = l1[i] - l0[i] - mean_x - g_star * dt;
            if k + 1 < n {
                d += 0.5 * (lambdas[k].values[j + 1] - lambdas[k].values[j]);
            }
            if k > 0 {
                d -= 0.5 * (lambdas[k - 1].values[j + 1] - lambdas[k - 1].values[j]);
            }
            rhs[k] += d;
        }
        let lead0 = mu[order[0]];
        // the same name must still hold more than half at the end of the step
        let lead1 = mu_next[order[0]];
        if lead0 > 0.5 && lead1 > 0.5 && lambdas[0].values[j + 1] > lambdas[0].values[j] {
            indicator_violations += 1;
        }
        std::mem::swap(&mut mu, &mut mu_next);
    }
    let mu_end = rank(&mu).sorted;
    let lhs: Vec<f64> = (0..n).map(|k| (mu_end[k] / mu_start[k]).ln()).collect();
    let residual = lhs.iter().zip(&rhs).map(|(l, r)| l - r).collect();
    RankedDecompositionReport {
        lhs,
        rhs,
        residual,
        local_time: lambdas.iter().map(LocalTimePath::terminal).collect(),
        crossing_steps,
        indicator_violations,
    }
}

/// Smallest slacks of `eps (1 - mu_(1))^2 <= tau^mu_(kk) <= 2M` over a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedCovarianceSlack {
    pub lower: f64,
    pub upper: f64,
}

pub fn ranked_covariance_slack(path: &PricePath, eps: f64, big_m: f64) -> RankedCovarianceSlack {
    let n = path.n();
    let a = path.vol().cov();
    let mut mu = vec![0.0; n];
    let mut lower = f64::INFINITY;
    let mut upper = f64::INFINITY;
    for k in 0..=path.n_steps() {
        path.weights(k, &mut mu);
        let lead = mu.iter().copied().fold(0.0, f64::max);
        let floor = eps * (1.0 - lead).powi(2);
        for i in 0..n {
            // (e_i - mu)^T a (e_i - mu)
            let mut t = a[i * n + i];
            for l in 0..n {
                t -= 2.0 * a[i * n + l] * mu[l];
                for r in 0..n {
                    t += mu[l] * a[l * n + r] * mu[r];
                }
            }
            lower = lower.min(t - floor);
            upper = upper.min(2.0 * big_m - t);
        }
    }
    RankedCovarianceSlack { lower, upper }
}
