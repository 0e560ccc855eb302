//! Monte Carlo checks of relative-arbitrage statements: the master formula for
//! diversity-weighted portfolios, the outperformance bound, the mirror
//! constructions and the instantaneous-dominance example.

use std::sync::Arc;

use serde::Serialize;

use crate::diversity::{check_path_diversity, log_diversity_from_log_prices};
use crate::error::{invalid, Error, Result};
use crate::markets::{integrate_log_euler, Drift, MarketModel, PricePath};
use crate::mc::map_paths;
use crate::numeric::compensated_sum;
use crate::paths::FactorPaths;
use crate::portfolios::{
    example_82_rho, example_83_eta, mirror_portfolio, portfolio_value_with, ConstantRule,
    DiversityWeighted, HoldMix, MirrorRule, PortfolioRule, ValueScheme, ValueTrace,
};
use crate::ranks::rank_order;

/// Outcome of comparing a winner with a loser on every path.
///
/// `terminal_log_ratio` is `log(Z^winner(T) / Z^loser(T))`; `fraction` counts
/// paths where it is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArbitrageExperimentResult {
    pub n_paths: usize,
    pub terminal_log_ratio: Vec<f64>,
    pub fraction: f64,
    /// Left side minus right side of the inequality under test, per path.
    pub slack: Vec<f64>,
    pub worst_path: usize,
    pub worst_slack: f64,
}

impl ArbitrageExperimentResult {
    pub fn new(terminal_log_ratio: Vec<f64>, slack: Vec<f64>) -> Self {
        assert_eq!(terminal_log_ratio.len(), slack.len());
        let n_paths = slack.len();
        let wins = terminal_log_ratio.iter().filter(|r| **r > 0.0).count();
        let mut worst_path = 0;
        let mut worst_slack = f64::INFINITY;
        for (i, s) in slack.iter().enumerate() {
            // NaN counts as the worst possible slack
            if !(*s >= worst_slack) {
                worst_path = i;
                worst_slack = *s;
            }
        }
        Self {
            n_paths,
            terminal_log_ratio,
            fraction: if n_paths == 0 {
                f64::NAN
            } else {
                wins as f64 / n_paths as f64
            },
            slack,
            worst_path,
            worst_slack,
        }
    }

    /// Slack equal to the log ratio itself.
    pub fn from_ratios(terminal_log_ratio: Vec<f64>) -> Self {
        let slack = terminal_log_ratio.clone();
        Self::new(terminal_log_ratio, slack)
    }

    pub fn all_win(&self) -> bool {
        self.fraction == 1.0
    }
}

/// Both sides of the master formula for `pi^(p)` on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MasterFormulaCheck {
    /// Simulated `log(Z^pi(T) / Z^mu(T))`, both started at 1.
    pub lhs: f64,
    /// `log(D_p(mu(T)) / D_p(mu(0)))`.
    pub diversity_term: f64,
    /// `(1 - p) * sum gamma*_pi(t_k) dt_k`.
    pub drift_term: f64,
    /// `lhs - diversity_term - drift_term`.
    pub residual: f64,
}

fn master_from_trace(prices: &PricePath, p: f64, lhs: f64, trace: &ValueTrace) -> MasterFormulaCheck {
    let grid = prices.grid();
    let k_max = prices.n_steps();
    let diversity_term = log_diversity_from_log_prices(prices.log_prices(k_max), p)
        - log_diversity_from_log_prices(prices.log_prices(0), p);
    let integral = compensated_sum((0..k_max).map(|k| trace.excess_growth[k] * grid.dt(k)));
    let drift_term = (1.0 - p) * integral;
    MasterFormulaCheck {
        lhs,
        diversity_term,
        drift_term,
        residual: lhs - diversity_term - drift_term,
    }
}

/// Compares the simulated relative value of `pi^(p)` with the master formula.
pub fn verify_master_formula(prices: &PricePath, p: f64) -> Result<MasterFormulaCheck> {
    verify_master_formula_with(prices, p, ValueScheme::Corrected)
}

pub fn verify_master_formula_with(
    prices: &PricePath,
    p: f64,
    scheme: ValueScheme,
) -> Result<MasterFormulaCheck> {
    let rule = DiversityWeighted::new(p)?;
    if p >= 1.0 {
        return Err(invalid("p must lie in (0, 1)"));
    }
    let mut trace = ValueTrace::default();
    let v = portfolio_value_with(&rule, prices, 1.0, scheme, Some(&mut trace))?;
    let lhs = *v.log_relative().last().unwrap();
    Ok(master_from_trace(prices, p, lhs, &trace))
}

/// Residuals on a fine set of paths and on the same paths at half the
/// resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterFormulaStudy {
    pub coarse_dt: f64,
    pub fine_dt: f64,
    pub coarse_mean_abs: f64,
    pub fine_mean_abs: f64,
    pub fine_max_abs: f64,
    /// `log2(coarse / fine)`.
    pub observed_order: f64,
}

pub fn master_formula_residuals(
    model: &MarketModel,
    factors: &FactorPaths,
    p: f64,
    scheme: ValueScheme,
) -> Result<Vec<MasterFormulaCheck>> {
    map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        verify_master_formula_with(&path, p, scheme)
    })
}

/// Self-convergence of the master-formula residual under halving of `dt`.
pub fn master_formula_study(
    model: &MarketModel,
    fine: &FactorPaths,
    p: f64,
    scheme: ValueScheme,
) -> Result<MasterFormulaStudy> {
    let coarse = fine.coarsened(2)?;
    let mean_abs = |v: &[MasterFormulaCheck]| {
        compensated_sum(v.iter().map(|c| c.residual.abs())) / v.len() as f64
    };
    let rf = master_formula_residuals(model, fine, p, scheme)?;
    let rc = master_formula_residuals(model, &coarse, p, scheme)?;
    let fine_mean_abs = mean_abs(&rf);
    let coarse_mean_abs = mean_abs(&rc);
    Ok(MasterFormulaStudy {
        coarse_dt: coarse.grid().dt(0),
        fine_dt: fine.grid().dt(0),
        coarse_mean_abs,
        fine_mean_abs,
        fine_max_abs: rf.iter().map(|c| c.residual.abs()).fold(0.0, f64::max),
        observed_order: (coarse_mean_abs / fine_mean_abs).log2(),
    })
}

/// Horizon beyond which `pi^(p)` beats the market: `2 log n / (p eps delta)`.
pub fn bound_45_threshold(n: usize, p: f64, eps: f64, delta: f64) -> f64 {
    2.0 * (n as f64).ln() / (p * eps * delta)
}

/// Pathwise lower bound `(1 - p) (eps delta T / 2 - log n / p)`.
pub fn a5_lower_bound(n: usize, p: f64, eps: f64, delta: f64, horizon: f64) -> f64 {
    (1.0 - p) * (0.5 * eps * delta * horizon - (n as f64).ln() / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaSource {
    /// Guaranteed by the model's construction.
    Model,
    /// Each path's own `1 - avg mu_(1)`.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bound45Report {
    pub p: f64,
    pub eps: f64,
    pub threshold: f64,
    pub delta_source: DeltaSource,
    /// Winner `pi^(p)`, loser the market; slack is the pathwise bound slack.
    pub result: ArbitrageExperimentResult,
    pub delta_avg: Vec<f64>,
    pub delta_max: Vec<f64>,
    pub master_residual: Vec<f64>,
    /// Steps where `pi_(1) > mu_(1)` or `pi_(n) < mu_(n)`.
    pub a4_violations: usize,
}

impl Bound45Report {
    /// Paths whose slack is at least `-factor * |master-formula residual|`.
    pub fn slack_within(&self, factor: f64) -> usize {
        self.result
            .slack
            .iter()
            .zip(&self.master_residual)
            .filter(|(s, r)| **s >= -factor * r.abs())
            .count()
    }
}

struct Bound45Path {
    log_ratio: f64,
    slack: f64,
    delta_avg: f64,
    delta_max: f64,
    residual: f64,
    a4_violations: usize,
}

/// Simulates `pi^(p)` against the market and checks strict outperformance
/// and the pathwise bound.
pub fn verify_bound_45(model: &MarketModel, p: f64, factors: &FactorPaths) -> Result<Bound45Report> {
    let rule = DiversityWeighted::new(p)?;
    if p >= 1.0 {
        return Err(invalid("p must lie in (0, 1)"));
    }
    let (eps, _) = model.vol().certificate();
    let n = model.n();
    let horizon = factors.grid().horizon();
    let guaranteed = model.guaranteed_delta();
    let rows = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let mut trace = ValueTrace::default();
        let v = portfolio_value_with(&rule, &path, 1.0, ValueScheme::Corrected, Some(&mut trace))?;
        let log_ratio = *v.log_relative().last().unwrap();
        let master = master_from_trace(&path, p, log_ratio, &trace);
        // delta only enters through the flags here, so any valid value will do
        let div = check_path_diversity(&path, 0.5)?;
        let delta = guaranteed.unwrap_or(div.delta_avg);
        let mut mu = vec![0.0; n];
        let mut a4 = 0;
        for k in 0..path.n_steps() {
            path.weights(k, &mut mu);
            let pi = &trace.weights[k * n..(k + 1) * n];
            let om = rank_order(&mu);
            let op = rank_order(pi);
            if pi[op[0]] > mu[om[0]] + 1e-15 || pi[op[n - 1]] < mu[om[n - 1]] - 1e-15 {
                a4 += 1;
            }
        }
        Ok(Bound45Path {
            log_ratio,
            slack: log_ratio - a5_lower_bound(n, p, eps, delta, horizon),
            delta_avg: div.delta_avg,
            delta_max: div.delta_max,
            residual: master.residual,
            a4_violations: a4,
        })
    })?;
    let threshold = match guaranteed {
        Some(d) => bound_45_threshold(n, p, eps, d),
        None => {
            let worst = rows.iter().map(|r| r.delta_avg).fold(f64::INFINITY, f64::min);
            bound_45_threshold(n, p, eps, worst)
        }
    };
    Ok(Bound45Report {
        p,
        eps,
        threshold,
        delta_source: if guaranteed.is_some() {
            DeltaSource::Model
        } else {
            DeltaSource::Realized
        },
        result: ArbitrageExperimentResult::new(
            rows.iter().map(|r| r.log_ratio).collect(),
            rows.iter().map(|r| r.slack).collect(),
        ),
        delta_avg: rows.iter().map(|r| r.delta_avg).collect(),
        delta_max: rows.iter().map(|r| r.delta_max).collect(),
        master_residual: rows.iter().map(|r| r.residual).collect(),
        a4_violations: rows.iter().map(|r| r.a4_violations).sum(),
    })
}

/// Which half of the closeness condition holds on every path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloseBranch {
    /// `Z^pi(T) / Z^mu(T) <= 1/beta`.
    AtMostInverse,
    /// `Z^pi(T) / Z^mu(T) >= beta`.
    AtLeast,
}

/// Mirror exponent for the branch, moved past its threshold by `margin`.
///
/// `AtMostInverse`: `p > 1 + (2/eta) log(1/beta)`.
/// `AtLeast`: `p < min(0, 1 - (2/eta) log(1/beta))`.
pub fn lemma_81_p(branch: CloseBranch, beta: f64, eta: f64, margin: f64) -> f64 {
    let c = (2.0 / eta) * (1.0 / beta).ln();
    match branch {
        CloseBranch::AtMostInverse => (1.0 + c) * (1.0 + margin),
        CloseBranch::AtLeast => {
            let bound = (1.0 - c).min(0.0);
            if bound < 0.0 {
                bound * (1.0 + margin)
            } else {
                -margin
            }
        }
    }
}

/// `p(T) = 1 + 2 log(1/mu_1(0)) / (eps delta^2 T)`.
pub fn example_81_threshold(mu1_0: f64, eps: f64, delta: f64, horizon: f64) -> f64 {
    1.0 + 2.0 * (1.0 / mu1_0).ln() / (eps * delta * delta * horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma81Report {
    pub beta: f64,
    pub eta: f64,
    pub branch: CloseBranch,
    pub p: f64,
    /// Smallest margin in the closeness condition over paths (log scale).
    pub close_min_slack: f64,
    /// Smallest `int tau^mu_{pi pi} dt - eta` over paths.
    pub separation_min_slack: f64,
    /// Winner the market, loser the mirror portfolio.
    pub result: ArbitrageExperimentResult,
}

fn left_sum(prices: &PricePath, ys: &[f64]) -> f64 {
    compensated_sum((0..prices.n_steps()).map(|k| ys[k] * prices.grid().dt(k)))
}

/// Builds the mirror of `rule` that the market beats and checks it does on
/// every path. Fails with `ExperimentInapplicable` if the closeness or
/// separation condition is violated on some path.
pub fn verify_lemma_81(
    rule: Arc<dyn PortfolioRule>,
    model: &MarketModel,
    factors: &FactorPaths,
    beta: f64,
    eta: f64,
    margin: f64,
) -> Result<Lemma81Report> {
    if !(beta > 0.0 && eta > 0.0 && margin > 0.0) {
        return Err(invalid("beta, eta and margin must be positive"));
    }
    let pre = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let mut trace = ValueTrace::default();
        let v = portfolio_value_with(rule.as_ref(), &path, 1.0, ValueScheme::Corrected, Some(&mut trace))?;
        Ok((*v.log_relative().last().unwrap(), left_sum(&path, &trace.tau_market)))
    })?;
    let lb = beta.ln();
    let upper = pre.iter().map(|(r, _)| -lb - r).fold(f64::INFINITY, f64::min);
    let lower = pre.iter().map(|(r, _)| r - lb).fold(f64::INFINITY, f64::min);
    let separation = pre.iter().map(|(_, s)| s - eta).fold(f64::INFINITY, f64::min);
    let (branch, close_min_slack) = if upper >= 0.0 {
        (CloseBranch::AtMostInverse, upper)
    } else if lower >= 0.0 {
        (CloseBranch::AtLeast, lower)
    } else {
        return Err(Error::ExperimentInapplicable(format!(
            "closeness condition fails on some path (slacks {upper:.3e}, {lower:.3e})"
        )));
    };
    if !(separation >= 0.0) {
        return Err(Error::ExperimentInapplicable(format!(
            "separation condition fails on some path (slack {separation:.3e})"
        )));
    }
    let p = lemma_81_p(branch, beta, eta, margin);
    let mirror = MirrorRule::new(rule, p)?;
    let ratios = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let v = portfolio_value_with(&mirror, &path, 1.0, ValueScheme::Corrected, None)?;
        Ok(-*v.log_relative().last().unwrap())
    })?;
    Ok(Lemma81Report {
        beta,
        eta,
        branch,
        p,
        close_min_slack,
        separation_min_slack: separation,
        result: ArbitrageExperimentResult::from_ratios(ratios),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example81Report {
    pub p_threshold: f64,
    pub lemma: Lemma81Report,
    /// Grid points where `Z^pihat > (mu_1(t)/mu_1(0))^p Z^mu`.
    pub ceiling_violations: usize,
    /// Smallest `p log(mu_1(t)/mu_1(0)) - log(Z^pihat/Z^mu)(t)`.
    pub ceiling_min_slack: f64,
}

/// Long `p` in the first stock, short `p - 1` in the market, with
/// `p = (1 + margin) p(T)`; `delta` is the diversity level of the model.
pub fn verify_example_81(
    model: &MarketModel,
    factors: &FactorPaths,
    delta: f64,
    margin: f64,
) -> Result<Example81Report> {
    let n = model.n();
    let (eps, _) = model.vol().certificate();
    let horizon = factors.grid().horizon();
    let mu1_0 = model.x0()[0] / model.x0().iter().sum::<f64>();
    let eta = eps * delta * delta * horizon;
    let e1: Arc<dyn PortfolioRule> = Arc::new(ConstantRule::unit(n, 0)?);
    let lemma = verify_lemma_81(e1.clone(), model, factors, mu1_0, eta, margin)?;
    let p = lemma.p;
    let mirror = MirrorRule::new(e1, p)?;
    let per_path = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let v = portfolio_value_with(&mirror, &path, 1.0, ValueScheme::Corrected, None)?;
        let l0 = log_mu1(&path, 0);
        let mut count = 0;
        let mut min_slack = f64::INFINITY;
        for (k, r) in v.log_relative().iter().enumerate() {
            let s = p * (log_mu1(&path, k) - l0) - r;
            if s < 0.0 {
                count += 1;
            }
            min_slack = min_slack.min(s);
        }
        Ok((count, min_slack))
    })?;
    Ok(Example81Report {
        p_threshold: example_81_threshold(mu1_0, eps, delta, horizon),
        lemma,
        ceiling_violations: per_path.iter().map(|r| r.0).sum(),
        ceiling_min_slack: per_path.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
    })
}

fn log_mu1(path: &PricePath, k: usize) -> f64 {
    let lx = path.log_prices(k);
    lx[0] - crate::numeric::log_sum_exp(lx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixCheck {
    pub mix: HoldMix,
    /// Grid points (over all paths) where some weight is negative.
    pub negative_weight_points: usize,
    pub min_weight: f64,
    pub result: ArbitrageExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Examples8283Report {
    pub p: f64,
    /// Initial capital of the underperforming mix.
    pub z: f64,
    /// Initial capital of the outperforming mix.
    pub zeta: f64,
    /// Winner `z Z^mu`, loser `Z^rho`.
    pub rho: MixCheck,
    /// Winner `Z^eta`, loser `zeta Z^mu`.
    pub eta: MixCheck,
}

/// The all-long mixes of the market with the mirror of the first stock.
pub fn verify_examples_82_83(
    model: &MarketModel,
    factors: &FactorPaths,
    p: f64,
) -> Result<Examples8283Report> {
    let n = model.n();
    let mu1_0 = model.x0()[0] / model.x0().iter().sum::<f64>();
    let rho = example_82_rho(p, mu1_0)?;
    let eta = example_83_eta(p, mu1_0)?;
    let z = rho.initial_capital();
    let zeta = eta.initial_capital();
    let mirror = MirrorRule::new(Arc::new(ConstantRule::unit(n, 0)?), p)?;
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    let rows = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let v = portfolio_value_with(&mirror, &path, 1.0, ValueScheme::Corrected, None)?;
        let mut mu = vec![0.0; n];
        let mut w = vec![0.0; n];
        // (negative points, min weight) for rho and eta
        let mut stats = [(0usize, f64::INFINITY); 2];
        for (k, lr) in v.log_relative().iter().enumerate() {
            path.weights(k, &mut mu);
            let pihat = mirror_portfolio(&e1, &mu, p)?;
            let r = lr.exp();
            for (s, mix) in stats.iter_mut().zip([&rho, &eta]) {
                mix.weights(r, &pihat, &mu, &mut w);
                let m = w.iter().copied().fold(f64::INFINITY, f64::min);
                if !(m >= 0.0) {
                    s.0 += 1;
                }
                s.1 = s.1.min(m);
            }
        }
        // With r = Z^pihat / Z^mu at T, the ratios are z / (z - 1 + r) and
        // (zeta + 1 - r) / zeta; z and zeta reach 1e48 for large p, so the
        // forms below avoid the cancellation in z - 1 + r.
        let one_minus_r = -v.log_relative().last().unwrap().exp_m1();
        let rho_ratio = -(-one_minus_r / z).ln_1p();
        let eta_ratio = (one_minus_r / zeta).ln_1p();
        Ok((stats, rho_ratio, eta_ratio))
    })?;
    let check = |mix: HoldMix, idx: usize, ratios: Vec<f64>| MixCheck {
        mix,
        negative_weight_points: rows.iter().map(|r| r.0[idx].0).sum(),
        min_weight: rows.iter().map(|r| r.0[idx].1).fold(f64::INFINITY, f64::min),
        result: ArbitrageExperimentResult::from_ratios(ratios),
    };
    Ok(Examples8283Report {
        p,
        z,
        zeta,
        rho: check(rho, 0, rows.iter().map(|r| r.1).collect()),
        eta: check(eta, 1, rows.iter().map(|r| r.2).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub n_paths: usize,
    /// Paths with `X_2 > X_1` at every grid point of `(0, T_2]`.
    pub leader_fraction: f64,
    /// Paths with `Z^pi > Z^mu` at every grid point `t > 0`.
    pub value_fraction: f64,
    /// `T_2 ^ T_1` per path, `None` if neither is reached on the grid.
    pub switch_time: Vec<Option<f64>>,
    /// Smallest `log(Z^pi / Z^mu)` over `t > 0`, per path.
    pub min_log_ratio: Vec<f64>,
    pub worst_path: usize,
}

/// Invest everything in the second stock until `Y <= Gamma / 2`, then hold the
/// market, and check that this beats the market at every grid time `t > 0`.
pub fn verify_instantaneous_dominance(
    model: &MarketModel,
    factors: &FactorPaths,
) -> Result<DominanceReport> {
    if !matches!(model.drift(), Drift::InstantaneousDominance(_)) {
        return Err(invalid("model must be the instantaneous-dominance market"));
    }
    let ln2 = std::f64::consts::LN_2;
    let rows = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let grid = path.grid();
        let mut gamma = 0.0;
        let mut switch: Option<usize> = None;
        let mut leader_ok = true;
        let mut min_ratio = f64::INFINITY;
        let mut held = 0.0;
        for k in 1..=path.n_steps() {
            gamma += path.growth(k - 1)[1] * grid.dt(k - 1);
            let lx = path.log_prices(k);
            let y = lx[1] - lx[0];
            let ratio = match switch {
                Some(_) => held,
                None => {
                    if y <= 0.0 {
                        leader_ok = false;
                    }
                    let r = ln2 + lx[1] - crate::numeric::log_sum_exp(lx);
                    // Gamma = t^alpha > 0 only up to T_1, so the switch is at T_2 ^ T_1.
                    let exited = path.state().stopping_step.is_some_and(|s| s <= k);
                    if y <= 0.5 * gamma || exited {
                        switch = Some(k);
                        held = r;
                    }
                    r
                }
            };
            min_ratio = min_ratio.min(ratio);
        }
        Ok((leader_ok, min_ratio, switch.map(|k| grid.t(k))))
    })?;
    let n_paths = rows.len();
    let frac = |c: usize| c as f64 / n_paths as f64;
    let min_log_ratio: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let worst_path = ArbitrageExperimentResult::from_ratios(min_log_ratio.clone()).worst_path;
    Ok(DominanceReport {
        n_paths,
        leader_fraction: frac(rows.iter().filter(|r| r.0).count()),
        value_fraction: frac(rows.iter().filter(|r| r.1 > 0.0).count()),
        switch_time: rows.iter().map(|r| r.2).collect(),
        min_log_ratio,
        worst_path,
    })
}
