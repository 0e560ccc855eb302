//! Dispatch from a validated [`Plan`] to the core experiments.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Map, Value};

use spt_lab_core::arbitrage::{
    verify_bound_45, verify_example_81, verify_examples_82_83, verify_instantaneous_dominance,
    master_formula_residuals, master_formula_study, DeltaSource,
};
use spt_lab_core::diversity::{check_path_diversity, theorem61_hypothesis_check};
use spt_lab_core::hedging::{
    black_scholes_call, call_decay_study, hedge_price, put_call_parity_gap, ClaimSpec, Underlying,
};
use spt_lab_core::markets::{integrate_log_euler, leader_log_weight, Drift, MarketModel, PricePath};
use spt_lab_core::mc::map_paths;
use spt_lab_core::numeric::Estimate;
use spt_lab_core::paths::FactorPaths;
use spt_lab_core::portfolios::{example_81_pihat, DiversityWeighted, PortfolioRule, ValueScheme};
use spt_lab_core::ranks::{signed_local_time, verify_ranked_decomposition};
use spt_lab_core::{Error as CoreError, Result as CoreResult};

use crate::config::{AssetSpec, Job, Plan, Scheme};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Empty,
}

impl Cell {
    /// Floats use 17 significant digits so they read back bit-for-bit.
    pub fn render(&self) -> String {
        match self {
            Self::Int(i) => i.to_string(),
            Self::Float(x) => format!("{x:.16e}"),
            Self::Bool(b) => b.to_string(),
            Self::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Self::Int(i as i64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Self::Bool(b)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Self::Empty, Self::Float)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem, e.g. `per_path`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Subject to the per-path opt-in.
    pub per_path: bool,
    /// Only written with `output.time_series`.
    pub time_series: bool,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            per_path: name == "per_path",
            time_series: name == "time_series",
        }
    }
}

/// A claim the experiment asserts with probability one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: &'static str,
    pub results: Map<String, Value>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

impl Report {
    fn new(experiment: &'static str) -> Self {
        Self {
            experiment,
            results: Map::new(),
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    fn put(&mut self, key: &str, v: impl Serialize) {
        self.results
            .insert(key.into(), serde_json::to_value(v).expect("plain data"));
    }

    fn check(&mut self, name: &str, passed: bool) {
        self.checks.push(Check {
            name: name.into(),
            passed,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn estimate(e: &Estimate) -> Value {
    json!({ "mean": e.mean, "std_err": e.std_err, "n": e.n })
}

/// Runs the plan on the configured number of worker threads.
pub fn run(plan: &Plan) -> CoreResult<Report> {
    match plan.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CoreError::NumericFailure(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(plan))
        }
        None => dispatch(plan),
    }
}

fn dispatch(plan: &Plan) -> CoreResult<Report> {
    let model = plan.model.as_ref();
    let factors = plan.factors.as_ref();
    let need = || model.expect("validated model");
    let f = || factors.expect("validated grid");
    match &plan.job {
        Job::Simulate => simulate(need(), f()),
        Job::DiversityReport { delta } => diversity_report(need(), f(), *delta),
        Job::Arbitrage45 { p } => arbitrage_45(need(), f(), *p),
        Job::Mirror81 { delta, margin } => mirror_81(need(), f(), *delta, *margin),
        Job::Examples8283 { p } => examples_82_83(need(), f(), *p),
        Job::MasterFormula { p, scheme } => master_formula(need(), f(), *p, *scheme),
        Job::RankedDecomposition => ranked_decomposition(need(), f()),
        Job::LocalTimeOracle => local_time_oracle(f()),
        Job::HedgePrice { stock, strike } => hedge(need(), f(), *stock, *strike),
        Job::CallDecay {
            strike,
            horizons,
            dt,
            p,
        } => call_decay(need(), *strike, horizons, *dt, *p, plan),
        Job::ParityGap { xi1, xi2 } => parity_gap(need(), f(), xi1, xi2),
        Job::InstantaneousDominance => dominance(need(), f()),
    }
}

fn leader(path: &PricePath, k: usize) -> f64 {
    leader_log_weight(path.log_prices(k)).1.exp()
}

fn series(model: &MarketModel, factors: &FactorPaths, with_prices: bool) -> CoreResult<Table> {
    let path = integrate_log_euler(model, factors, 0)?;
    let n = model.n();
    let names: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    let mut header = vec!["t"];
    if with_prices {
        header.extend(names.iter().map(String::as_str));
    }
    header.push("mu_max");
    let mut t = Table::new("time_series", &header);
    for k in 0..=path.n_steps() {
        let mut row = vec![Cell::from(path.grid().t(k))];
        if with_prices {
            row.extend((0..n).map(|i| Cell::from(path.price(k, i))));
        }
        row.push(leader(&path, k).into());
        t.rows.push(row);
    }
    Ok(t)
}

fn simulate(model: &MarketModel, factors: &FactorPaths) -> CoreResult<Report> {
    let n = model.n();
    let k = factors.grid().n_steps();
    let rows = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        Ok((path.prices(k), leader(&path, k), path.state().breaches))
    })?;
    let mut r = Report::new("simulate");
    r.put("model", model.kind());
    r.put("n_paths", rows.len());
    let means: Vec<Value> = (0..n)
        .map(|i| {
            let col: Vec<f64> = rows.iter().map(|row| row.0[i]).collect();
            estimate(&Estimate::from_samples(&col))
        })
        .collect();
    r.put("terminal_price", means);
    let lead: Vec<f64> = rows.iter().map(|row| row.1).collect();
    r.put("terminal_mu_max", estimate(&Estimate::from_samples(&lead)));
    r.put("paths_with_breach", rows.iter().filter(|row| row.2 > 0).count());
    let mut header = vec!["path_id".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend(["mu_max".into(), "breaches".into()]);
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("per_path", &h);
    for (i, (x, l, b)) in rows.into_iter().enumerate() {
        let mut row = vec![Cell::from(i)];
        row.extend(x.into_iter().map(Cell::from));
        row.extend([Cell::from(l), Cell::from(b)]);
        t.rows.push(row);
    }
    r.tables.push(t);
    r.tables.push(series(model, factors, true)?);
    Ok(r)
}

fn diversity_report(model: &MarketModel, factors: &FactorPaths, delta: f64) -> CoreResult<Report> {
    let diverse_model = matches!(model.drift(), Drift::Diverse(_));
    let rows = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let d = check_path_diversity(&path, delta)?;
        let hyp = if diverse_model {
            Some(theorem61_hypothesis_check(model, &path, delta)?.all_hold)
        } else {
            None
        };
        Ok((d, path.state().breaches, hyp))
    })?;
    let n = rows.len() as f64;
    let frac = |f: &dyn Fn(&(spt_lab_core::diversity::DiversityReport, usize, Option<bool>)) -> bool| {
        rows.iter().filter(|r| f(r)).count() as f64 / n
    };
    let mut r = Report::new("diversity-report");
    r.put("delta", delta);
    r.put("diverse_fraction", frac(&|x| x.0.diverse));
    r.put("weakly_diverse_fraction", frac(&|x| x.0.weakly_diverse));
    r.put("breach_fraction", frac(&|x| x.1 > 0));
    r.put(
        "max_leader",
        rows.iter().map(|x| x.0.max_leader).fold(f64::NEG_INFINITY, f64::max),
    );
    let avg: Vec<f64> = rows.iter().map(|x| x.0.avg_leader).collect();
    r.put("avg_leader", estimate(&Estimate::from_samples(&avg)));
    if diverse_model {
        let hold = frac(&|x| x.2 == Some(true));
        r.put("drift_conditions_fraction", hold);
        r.check("drift_conditions_hold", hold == 1.0);
        r.check("diverse_on_every_path", frac(&|x| x.0.diverse) == 1.0);
    }
    let mut t = Table::new(
        "per_path",
        &["path_id", "max_leader", "avg_leader", "diverse", "weakly_diverse", "breaches"],
    );
    for (i, (d, b, _)) in rows.iter().enumerate() {
        t.rows.push(vec![
            i.into(),
            d.max_leader.into(),
            d.avg_leader.into(),
            d.diverse.into(),
            d.weakly_diverse.into(),
            (*b).into(),
        ]);
    }
    r.tables.push(t);
    r.tables.push(series(model, factors, false)?);
    Ok(r)
}

fn arbitrage_45(model: &MarketModel, factors: &FactorPaths, p: f64) -> CoreResult<Report> {
    let b = verify_bound_45(model, p, factors)?;
    let horizon = factors.grid().horizon();
    let mut r = Report::new("arbitrage-45");
    r.put("p", b.p);
    r.put("eps", b.eps);
    r.put("threshold", b.threshold);
    r.put("horizon", horizon);
    r.put("delta_source", b.delta_source);
    r.put("fraction", b.result.fraction);
    r.put("worst_path", b.result.worst_path);
    r.put("worst_slack", b.result.worst_slack);
    r.put("slack_within_3_residuals", b.slack_within(3.0));
    r.put("a4_violations", b.a4_violations);
    let max_res = b.master_residual.iter().map(|x| x.abs()).fold(0.0, f64::max);
    r.put("max_master_residual", max_res);
    if b.delta_source == DeltaSource::Model && horizon > b.threshold {
        r.check("outperforms_on_every_path", b.result.all_win());
    }
    r.check("a4_orderings_hold", b.a4_violations == 0);
    let mut t = Table::new(
        "per_path",
        &["path_id", "terminal_log_ratio", "a5_slack", "delta_avg", "delta_max"],
    );
    for i in 0..b.result.n_paths {
        t.rows.push(vec![
            i.into(),
            b.result.terminal_log_ratio[i].into(),
            b.result.slack[i].into(),
            b.delta_avg[i].into(),
            b.delta_max[i].into(),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

fn inapplicable_as_failure(r: &mut Report, e: CoreError) -> CoreResult<()> {
    match e {
        CoreError::ExperimentInapplicable(m) => {
            r.put("inapplicable", m);
            r.check("applicable", false);
            Ok(())
        }
        other => Err(other),
    }
}

fn mirror_81(model: &MarketModel, factors: &FactorPaths, delta: f64, margin: f64) -> CoreResult<Report> {
    let mut r = Report::new("mirror-81");
    let ex = match verify_example_81(model, factors, delta, margin) {
        Ok(x) => x,
        Err(e) => {
            inapplicable_as_failure(&mut r, e)?;
            return Ok(r);
        }
    };
    let l = &ex.lemma;
    r.put("p_threshold", ex.p_threshold);
    r.put("p", l.p);
    r.put("beta", l.beta);
    r.put("eta", l.eta);
    r.put("branch", l.branch);
    r.put("close_min_slack", l.close_min_slack);
    r.put("separation_min_slack", l.separation_min_slack);
    r.put("fraction", l.result.fraction);
    r.put("worst_path", l.result.worst_path);
    r.put("worst_slack", l.result.worst_slack);
    r.put("ceiling_violations", ex.ceiling_violations);
    r.put("ceiling_min_slack", ex.ceiling_min_slack);
    r.check("market_beats_mirror_on_every_path", l.result.all_win());
    r.check("ceiling_holds_everywhere", ex.ceiling_violations == 0);
    let mut t = Table::new("per_path", &["path_id", "terminal_log_ratio", "slack"]);
    for i in 0..l.result.n_paths {
        t.rows.push(vec![
            i.into(),
            l.result.terminal_log_ratio[i].into(),
            l.result.slack[i].into(),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

fn examples_82_83(model: &MarketModel, factors: &FactorPaths, p: f64) -> CoreResult<Report> {
    let x = verify_examples_82_83(model, factors, p)?;
    let mut r = Report::new("examples-82-83");
    r.put("p", x.p);
    r.put("z", x.z);
    r.put("zeta", x.zeta);
    for (name, m) in [("rho", &x.rho), ("eta", &x.eta)] {
        r.put(&format!("{name}_fraction"), m.result.fraction);
        r.put(&format!("{name}_worst_slack"), m.result.worst_slack);
        r.put(&format!("{name}_negative_weight_points"), m.negative_weight_points);
        r.put(&format!("{name}_min_weight"), m.min_weight);
        r.check(&format!("{name}_comparison_on_every_path"), m.result.all_win());
        r.check(&format!("{name}_weights_nonnegative"), m.negative_weight_points == 0);
    }
    let mut t = Table::new("per_path", &["path_id", "rho_log_ratio", "eta_log_ratio"]);
    for i in 0..x.rho.result.n_paths {
        t.rows.push(vec![
            i.into(),
            x.rho.result.terminal_log_ratio[i].into(),
            x.eta.result.terminal_log_ratio[i].into(),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

fn value_scheme(s: Scheme) -> ValueScheme {
    match s {
        Scheme::Corrected => ValueScheme::Corrected,
        Scheme::Euler => ValueScheme::Euler,
    }
}

fn master_formula(model: &MarketModel, factors: &FactorPaths, p: f64, scheme: Scheme) -> CoreResult<Report> {
    let s = value_scheme(scheme);
    let study = master_formula_study(model, factors, p, s)?;
    let checks = master_formula_residuals(model, factors, p, s)?;
    let mut r = Report::new("master-formula");
    r.put("p", p);
    r.put("scheme", format!("{scheme:?}").to_lowercase());
    r.put("coarse_dt", study.coarse_dt);
    r.put("fine_dt", study.fine_dt);
    r.put("coarse_mean_abs", study.coarse_mean_abs);
    r.put("fine_mean_abs", study.fine_mean_abs);
    r.put("fine_max_abs", study.fine_max_abs);
    r.put("observed_order", study.observed_order);
    let mut t = Table::new(
        "per_path",
        &["path_id", "lhs", "diversity_term", "drift_term", "residual"],
    );
    for (i, c) in checks.iter().enumerate() {
        t.rows.push(vec![
            i.into(),
            c.lhs.into(),
            c.diversity_term.into(),
            c.drift_term.into(),
            c.residual.into(),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

/// `mean |residual_(1)| / mean |Lambda(T) / 2|` over the paths.
fn relative_ranked_residual(model: &MarketModel, factors: &FactorPaths) -> CoreResult<(f64, Vec<(f64, f64, f64, f64, usize, usize)>)> {
    let rows = map_paths(factors.n_paths(), |i| {
        let path = integrate_log_euler(model, factors, i)?;
        let d = verify_ranked_decomposition(&path);
        Ok((
            d.lhs[0],
            d.rhs[0],
            d.residual[0],
            d.local_time[0],
            d.crossing_steps,
            d.indicator_violations,
        ))
    })?;
    let num: f64 = rows.iter().map(|r| r.2.abs()).sum();
    let den: f64 = rows.iter().map(|r| 0.5 * r.3.abs()).sum();
    Ok((num / den, rows))
}

fn ranked_decomposition(model: &MarketModel, factors: &FactorPaths) -> CoreResult<Report> {
    let (fine, rows) = relative_ranked_residual(model, factors)?;
    let mut r = Report::new("ranked-decomposition");
    r.put("relative_residual", fine);
    if factors.grid().n_steps() % 2 == 0 {
        let (coarse, _) = relative_ranked_residual(model, &factors.coarsened(2)?)?;
        r.put("relative_residual_coarse", coarse);
    }
    r.put("crossing_steps", rows.iter().map(|x| x.4).sum::<usize>());
    let violations: usize = rows.iter().map(|x| x.5).sum();
    r.put("indicator_violations", violations);
    r.check("local_time_only_at_ties", violations == 0);
    let mut t = Table::new(
        "per_path",
        &["path_id", "lhs", "rhs", "residual", "local_time", "crossing_steps"],
    );
    for (i, x) in rows.iter().enumerate() {
        t.rows.push(vec![i.into(), x.0.into(), x.1.into(), x.2.into(), x.3.into(), x.4.into()]);
    }
    r.tables.push(t);
    Ok(r)
}

fn local_time_oracle(factors: &FactorPaths) -> CoreResult<Report> {
    let lt = map_paths(factors.n_paths(), |i| {
        let inc = factors.increments(i)?;
        let m = factors.m();
        let mut w = Vec::with_capacity(inc.len() / m + 1);
        let mut s = 0.0;
        w.push(0.0);
        for step in inc.chunks(m) {
            s += step[0];
            w.push(s);
        }
        Ok(signed_local_time(&w)?.terminal())
    })?;
    let e = Estimate::from_samples(&lt);
    let horizon = factors.grid().horizon();
    let oracle = (2.0 * horizon / std::f64::consts::PI).sqrt();
    let mut r = Report::new("local-time-oracle");
    r.put("estimate", estimate(&e));
    r.put("oracle", oracle);
    r.put("relative_error", (e.mean - oracle).abs() / oracle);
    let mut t = Table::new("per_path", &["path_id", "local_time"]);
    for (i, x) in lt.iter().enumerate() {
        t.rows.push(vec![i.into(), (*x).into()]);
    }
    r.tables.push(t);
    Ok(r)
}

fn hedge(model: &MarketModel, factors: &FactorPaths, stock: usize, strike: f64) -> CoreResult<Report> {
    let h = hedge_price(model, &ClaimSpec::call_on_stock(stock, strike), factors)?;
    let mut r = Report::new("hedge-price");
    r.put("stock", stock);
    r.put("strike", strike);
    r.put("price", estimate(&h.price));
    r.put("deflator", estimate(&h.deflator));
    r.put("nonzero_payoffs", h.nonzero_payoffs);
    if matches!(model.drift(), Drift::Constant(_)) {
        let vol = model.vol().a(stock, stock).sqrt();
        let bs = black_scholes_call(
            model.x0()[stock],
            strike,
            model.short_rate(),
            vol,
            factors.grid().horizon(),
        )?;
        r.put("closed_form", bs);
        r.put("z_score", h.price.z_score(bs));
    }
    Ok(r)
}

fn call_decay(
    model: &MarketModel,
    strike: f64,
    horizons: &[f64],
    dt: f64,
    p: f64,
    plan: &Plan,
) -> CoreResult<Report> {
    let s = call_decay_study(model, strike, horizons, dt, plan.n_paths, plan.config.mc.master_seed, p)?;
    let mut r = Report::new("call-decay");
    r.put("strike", s.strike);
    r.put("x1_0", s.x1_0);
    r.put("dt", dt);
    r.put("p", p);
    r.check("below_initial_price", s.below_underlying);
    r.check("nonincreasing_within_noise", s.nonincreasing);
    r.check("within_envelope", s.within_envelope);
    let mut t = Table::new("call_decay", &["T", "h_hat", "stderr", "envelope"]);
    for row in &s.rows {
        t.rows.push(vec![
            row.horizon.into(),
            row.h_hat.mean.into(),
            row.h_hat.std_err.into(),
            row.envelope.into(),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

fn underlying(a: &AssetSpec, n: usize) -> CoreResult<Underlying> {
    Ok(match a {
        AssetSpec::Market => Underlying::Market,
        AssetSpec::Stock(i) => Underlying::Stock(*i),
        AssetSpec::Pihat(p) => {
            let rule: Arc<dyn PortfolioRule> = Arc::new(example_81_pihat(n, *p)?);
            Underlying::Portfolio(rule)
        }
        AssetSpec::Diversity(p) => Underlying::Portfolio(Arc::new(DiversityWeighted::new(*p)?)),
    })
}

fn parity_gap(model: &MarketModel, factors: &FactorPaths, xi1: &AssetSpec, xi2: &AssetSpec) -> CoreResult<Report> {
    let n = model.n();
    let g = put_call_parity_gap(model, &underlying(xi1, n)?, &underlying(xi2, n)?, factors)?;
    let mut r = Report::new("parity-gap");
    r.put("gap", estimate(&g.gap));
    r.put("initial_gap", g.initial_gap);
    r.put("sigmas", g.sigmas());
    r.put("h1", estimate(&g.h1));
    r.put("h2", estimate(&g.h2));
    Ok(r)
}

fn dominance(model: &MarketModel, factors: &FactorPaths) -> CoreResult<Report> {
    let d = verify_instantaneous_dominance(model, factors)?;
    let mut r = Report::new("instantaneous-dominance");
    r.put("first_grid_time", factors.grid().t(1));
    r.put("leader_fraction", d.leader_fraction);
    r.put("value_fraction", d.value_fraction);
    r.put("worst_path", d.worst_path);
    r.put("worst_log_ratio", d.min_log_ratio[d.worst_path]);
    r.check("second_stock_leads_until_switch", d.leader_fraction == 1.0);
    r.check("portfolio_beats_market_on_every_path", d.value_fraction == 1.0);
    let mut t = Table::new("per_path", &["path_id", "min_log_ratio", "switch_time"]);
    for i in 0..d.n_paths {
        t.rows.push(vec![i.into(), d.min_log_ratio[i].into(), d.switch_time[i].into()]);
    }
    r.tables.push(t);
    Ok(r)
}
