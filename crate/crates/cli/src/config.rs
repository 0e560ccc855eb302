//! Experiment configuration: TOML in, validated [`Plan`] out.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use spt_lab_core::markets::{
    constant_coefficient_market, diverse_market, instantaneous_dominance_market, ou_two_stock,
    patched_weakly_diverse, MarketModel, VolatilityMatrix,
};
use spt_lab_core::paths::{FactorPaths, PathGrid};
use spt_lab_core::Error as CoreError;

/// Above this many paths per-path tables are only written when asked for.
pub const PER_PATH_DEFAULT_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    DiversityReport,
    #[serde(rename = "arbitrage-45")]
    Arbitrage45,
    #[serde(rename = "mirror-81")]
    Mirror81,
    #[serde(rename = "examples-82-83")]
    Examples8283,
    MasterFormula,
    RankedDecomposition,
    LocalTimeOracle,
    HedgePrice,
    CallDecay,
    ParityGap,
    InstantaneousDominance,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::DiversityReport => "diversity-report",
            Self::Arbitrage45 => "arbitrage-45",
            Self::Mirror81 => "mirror-81",
            Self::Examples8283 => "examples-82-83",
            Self::MasterFormula => "master-formula",
            Self::RankedDecomposition => "ranked-decomposition",
            Self::LocalTimeOracle => "local-time-oracle",
            Self::HedgePrice => "hedge-price",
            Self::CallDecay => "call-decay",
            Self::ParityGap => "parity-gap",
            Self::InstantaneousDominance => "instantaneous-dominance",
        }
    }
}

/// Model section; `kind` selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Constant rates of return `b` and volatility rows `sigma`.
    Gbm {
        b: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        x0: Vec<f64>,
        #[serde(default)]
        short_rate: f64,
    },
    Diverse {
        sigma: Vec<Vec<f64>>,
        /// Growth rates of the non-leaders; zero when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<Vec<f64>>,
        delta: f64,
        /// Defaults to the largest eigenvalue of the covariance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_bound: Option<f64>,
        x0: Vec<f64>,
        #[serde(default)]
        short_rate: f64,
    },
    OuTwoStock {
        alpha: f64,
        #[serde(default = "one")]
        x0: f64,
        #[serde(default)]
        switch_time: f64,
    },
    /// Diverse base model switched on by the leader reaching `1 - eta`.
    Patched {
        sigma: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<Vec<f64>>,
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_bound: Option<f64>,
        x0: Vec<f64>,
        eta: f64,
    },
    InstantaneousDominance {
        alpha: f64,
        eta: f64,
        eta_prime: f64,
        #[serde(default = "one")]
        c: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricConfig {
    pub ratio: f64,
    pub n_geometric: i64,
    /// Omitted: the grid is geometric all the way to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_switch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_uniform: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometric: Option<GeometricConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: i64,
    pub master_seed: u64,
    /// Worker threads; the rayon default when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<i64>,
}

/// Experiment parameters; which keys are required depends on the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// `corrected` or `euler`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stock: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi2: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: String,
    /// Defaults to on up to [`PER_PATH_DEFAULT_LIMIT`] paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_path: Option<bool>,
    #[serde(default)]
    pub time_series: bool,
    #[serde(default = "yes")]
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            per_path: None,
            time_series: false,
            json: true,
        }
    }
}

fn default_dir() -> String {
    "out".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub mc: McConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One problem with a config, tied to the offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub key: String,
    pub message: String,
}

impl ValidationError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

/// Command-line values that beat the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub paths: Option<i64>,
    pub seed: Option<u64>,
    pub steps: Option<i64>,
    pub threads: Option<i64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ValidationErrors> {
        toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .filter(|_| e.message().contains("field"))
                .unwrap_or("config")
                .to_string();
            ValidationErrors(vec![ValidationError::new(&key, e.to_string().trim_end())])
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.out {
            self.output.directory = d.clone();
        }
        if let Some(n) = o.paths {
            self.mc.n_paths = n;
        }
        if let Some(s) = o.seed {
            self.mc.master_seed = s;
        }
        if let Some(t) = o.threads {
            self.mc.threads = Some(t);
        }
        if let (Some(k), Some(g)) = (o.steps, self.grid.as_mut()) {
            match g.geometric.as_mut() {
                Some(geo) => geo.n_geometric = k,
                None => g.n_steps = Some(k),
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<Plan, ValidationErrors> {
        Validator::default().plan(self)
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ValidationErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ValidationErrors(vec![ValidationError::new(
            "config",
            format!("cannot read {}: {e}", path.display()),
        )])
    })?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Traded asset named in a parity config: `market`, `stock:<i>`,
/// `pihat:<p>` (mirror of the first stock) or `diversity:<p>`.
#[derive(Debug, Clone, PartialEq)]
pub enum AssetSpec {
    Market,
    Stock(usize),
    Pihat(f64),
    Diversity(f64),
}

impl AssetSpec {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s == "market" {
            return Some(Self::Market);
        }
        let (head, tail) = s.split_once(':')?;
        match head {
            "stock" => tail.parse().ok().map(Self::Stock),
            "pihat" => tail.parse().ok().filter(|p: &f64| p.is_finite()).map(Self::Pihat),
            "diversity" => tail
                .parse()
                .ok()
                .filter(|p: &f64| *p > 0.0 && *p <= 1.0)
                .map(Self::Diversity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Corrected,
    Euler,
}

/// Experiment with its checked parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Simulate,
    DiversityReport { delta: f64 },
    Arbitrage45 { p: f64 },
    Mirror81 { delta: f64, margin: f64 },
    Examples8283 { p: f64 },
    MasterFormula { p: f64, scheme: Scheme },
    RankedDecomposition,
    LocalTimeOracle,
    HedgePrice { stock: usize, strike: f64 },
    CallDecay { strike: f64, horizons: Vec<f64>, dt: f64, p: f64 },
    ParityGap { xi1: AssetSpec, xi2: AssetSpec },
    InstantaneousDominance,
}

/// Everything a run needs, built only from a config that passed validation.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub model: Option<MarketModel>,
    pub factors: Option<FactorPaths>,
    pub job: Job,
    pub n_paths: usize,
    pub threads: Option<usize>,
    pub per_path: bool,
}

#[derive(Default)]
struct Validator {
    errors: Vec<ValidationError>,
}

fn core_message(e: &CoreError) -> String {
    match e {
        CoreError::InvalidArgument(m)
        | CoreError::InvalidModel(m)
        | CoreError::InvalidInitialCondition(m) => m.clone(),
        other => other.to_string(),
    }
}

impl Validator {
    fn push(&mut self, key: &str, message: impl Into<String>) {
        self.errors.push(ValidationError::new(key, message));
    }

    fn require<T: Clone>(&mut self, key: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.push(key, "missing key");
        }
        v.clone()
    }

    fn positive(&mut self, key: &str, v: f64) -> bool {
        let ok = v.is_finite() && v > 0.0;
        if !ok {
            self.push(key, format!("must be positive, got {v}"));
        }
        ok
    }

    fn sigma(&mut self, key: &str, rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
            self.push(key, "must be a non-empty list of equal-length rows");
            return None;
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            self.push(key, "entries must be finite");
            return None;
        }
        Some(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    fn model(&mut self, cfg: &ModelConfig, horizon: Option<f64>) -> Option<MarketModel> {
        let built = match cfg {
            ModelConfig::Gbm {
                b,
                sigma,
                x0,
                short_rate,
            } => {
                let s = self.sigma("model.sigma", sigma)?;
                constant_coefficient_market(b, &s, x0)
                    .and_then(|m| m.with_short_rate(*short_rate))
            }
            ModelConfig::Diverse {
                sigma,
                g,
                delta,
                m_bound,
                x0,
                short_rate,
            } => {
                let s = self.sigma("model.sigma", sigma)?;
                diverse(&s, g, *delta, *m_bound, x0).and_then(|m| m.with_short_rate(*short_rate))
            }
            ModelConfig::OuTwoStock {
                alpha,
                x0,
                switch_time,
            } => ou_two_stock(*alpha, *x0, *switch_time),
            ModelConfig::Patched {
                sigma,
                g,
                delta,
                m_bound,
                x0,
                eta,
            } => {
                let s = self.sigma("model.sigma", sigma)?;
                let Some(h) = horizon else {
                    self.push("grid", "the patched model needs a grid horizon");
                    return None;
                };
                diverse(&s, g, *delta, *m_bound, x0)
                    .and_then(|base| patched_weakly_diverse(&base, *eta, h))
            }
            ModelConfig::InstantaneousDominance {
                alpha,
                eta,
                eta_prime,
                c,
            } => instantaneous_dominance_market(*alpha, *eta, *eta_prime, *c),
        };
        match built {
            Ok(m) => Some(m),
            Err(e) => {
                let key = match &e {
                    CoreError::InvalidInitialCondition(_) => "model.x0",
                    _ => "model",
                };
                self.push(key, core_message(&e));
                None
            }
        }
    }

    fn grid(&mut self, g: &GridConfig) -> Option<PathGrid> {
        if !self.positive("grid.horizon", g.horizon) {
            return None;
        }
        let built = match (&g.n_steps, &g.geometric) {
            (Some(_), Some(_)) => {
                self.push("grid", "give either n_steps or [grid.geometric], not both");
                return None;
            }
            (None, None) => {
                self.push("grid.n_steps", "missing key");
                return None;
            }
            (Some(k), None) => {
                if *k < 1 {
                    self.push("grid.n_steps", format!("must be at least 1, got {k}"));
                    return None;
                }
                PathGrid::uniform(g.horizon, *k as usize)
            }
            (None, Some(geo)) => {
                if geo.n_geometric < 1 {
                    self.push("grid.geometric.n_geometric", "must be at least 1");
                    return None;
                }
                match (geo.t_switch, geo.n_uniform) {
                    (None, None) => {
                        PathGrid::geometric(g.horizon, geo.ratio, geo.n_geometric as usize)
                    }
                    (Some(ts), Some(nu)) if nu >= 1 => PathGrid::geometric_then_uniform(
                        g.horizon,
                        ts,
                        geo.ratio,
                        geo.n_geometric as usize,
                        nu as usize,
                    ),
                    _ => {
                        self.push(
                            "grid.geometric",
                            "t_switch and n_uniform (at least 1) go together",
                        );
                        return None;
                    }
                }
            }
        };
        built
            .map_err(|e| self.push("grid", core_message(&e)))
            .ok()
    }

    fn p_in(&mut self, key: &str, p: Option<f64>, lo: f64, hi: f64) -> Option<f64> {
        let p = self.require(key, &p)?;
        if !(p > lo && p < hi) {
            self.push(key, format!("must lie in ({lo}, {hi}), got {p}"));
            return None;
        }
        Some(p)
    }

    fn job(&mut self, cfg: &ExperimentConfig, model: Option<&MarketModel>) -> Option<Job> {
        let pr = &cfg.params;
        let model_delta = model.and_then(MarketModel::guaranteed_delta);
        let delta = |v: &mut Self| -> Option<f64> {
            match pr.delta.or(model_delta) {
                Some(d) if d > 0.0 && d < 0.5 => Some(d),
                Some(d) => {
                    v.push("params.delta", format!("must lie in (0, 1/2), got {d}"));
                    None
                }
                None => {
                    v.push("params.delta", "missing key (the model has no diversity level)");
                    None
                }
            }
        };
        let n = model.map_or(0, MarketModel::n);
        Some(match cfg.experiment {
            Experiment::Simulate => Job::Simulate,
            Experiment::DiversityReport => Job::DiversityReport { delta: delta(self)? },
            Experiment::Arbitrage45 => Job::Arbitrage45 {
                p: self.p_in("params.p", pr.p, 0.0, 1.0)?,
            },
            Experiment::Mirror81 => {
                let d = delta(self)?;
                let margin = pr.margin.unwrap_or(0.1);
                if !(margin > 0.0 && margin.is_finite()) {
                    self.push("params.margin", "must be positive");
                    return None;
                }
                Job::Mirror81 { delta: d, margin }
            }
            Experiment::Examples8283 => {
                let p = self.require("params.p", &pr.p)?;
                if !(p > 1.0 && p.is_finite()) {
                    self.push("params.p", format!("must exceed 1, got {p}"));
                    return None;
                }
                Job::Examples8283 { p }
            }
            Experiment::MasterFormula => {
                let scheme = match pr.scheme.as_deref() {
                    None | Some("corrected") => Scheme::Corrected,
                    Some("euler") => Scheme::Euler,
                    Some(s) => {
                        self.push("params.scheme", format!("expected corrected or euler, got {s}"));
                        return None;
                    }
                };
                Job::MasterFormula {
                    p: self.p_in("params.p", pr.p, 0.0, 1.0)?,
                    scheme,
                }
            }
            Experiment::RankedDecomposition => {
                if n != 2 {
                    self.push("model", "ranked decomposition needs a two-stock model");
                    return None;
                }
                Job::RankedDecomposition
            }
            Experiment::LocalTimeOracle => Job::LocalTimeOracle,
            Experiment::HedgePrice => {
                let stock = pr.stock.unwrap_or(0);
                if stock < 0 || stock as usize >= n {
                    self.push("params.stock", format!("must index one of the {n} stocks"));
                    return None;
                }
                let strike = self.require("params.strike", &pr.strike)?;
                if !(strike >= 0.0 && strike.is_finite()) {
                    self.push("params.strike", "must be nonnegative");
                    return None;
                }
                Job::HedgePrice {
                    stock: stock as usize,
                    strike,
                }
            }
            Experiment::CallDecay => {
                let strike = self.require("params.strike", &pr.strike)?;
                let horizons = self.require("params.horizons", &pr.horizons)?;
                let dt = self.require("params.dt", &pr.dt)?;
                let p = self.p_in("params.p", pr.p, 0.0, 1.0)?;
                if horizons.is_empty() || horizons.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                    self.push("params.horizons", "must be a non-empty list of positive times");
                    return None;
                }
                if !self.positive("params.dt", dt) {
                    return None;
                }
                if !(strike >= 0.0 && strike.is_finite()) {
                    self.push("params.strike", "must be nonnegative");
                    return None;
                }
                if model.is_some_and(|m| !(m.short_rate() > 0.0)) {
                    self.push("model.short_rate", "call decay needs a positive short rate");
                    return None;
                }
                if model_delta.is_none() {
                    self.push("model.kind", "call decay needs the diverse model");
                    return None;
                }
                Job::CallDecay {
                    strike,
                    horizons,
                    dt,
                    p,
                }
            }
            Experiment::ParityGap => {
                let side = |v: &mut Self, key: &str, s: &Option<String>| -> Option<AssetSpec> {
                    let s = v.require(key, s)?;
                    match AssetSpec::parse(&s) {
                        Some(AssetSpec::Stock(i)) if i >= n => {
                            v.push(key, format!("stock index {i} out of range"));
                            None
                        }
                        Some(a) => Some(a),
                        None => {
                            v.push(
                                key,
                                format!("expected market, stock:<i>, pihat:<p> or diversity:<p>, got {s}"),
                            );
                            None
                        }
                    }
                };
                let xi1 = side(self, "params.xi1", &pr.xi1);
                let xi2 = side(self, "params.xi2", &pr.xi2);
                Job::ParityGap {
                    xi1: xi1?,
                    xi2: xi2?,
                }
            }
            Experiment::InstantaneousDominance => {
                if !matches!(cfg.model, Some(ModelConfig::InstantaneousDominance { .. })) {
                    self.push("model.kind", "expected instantaneous-dominance");
                    return None;
                }
                Job::InstantaneousDominance
            }
        })
    }

    fn plan(mut self, cfg: &ExperimentConfig) -> Result<Plan, ValidationErrors> {
        let n_paths = if cfg.mc.n_paths < 1 {
            self.push("mc.n_paths", format!("must be at least 1, got {}", cfg.mc.n_paths));
            None
        } else {
            Some(cfg.mc.n_paths as usize)
        };
        let threads = match cfg.mc.threads {
            Some(t) if t < 1 => {
                self.push("mc.threads", format!("must be at least 1, got {t}"));
                None
            }
            t => t.map(|t| t as usize),
        };
        let needs_grid = cfg.experiment != Experiment::CallDecay;
        let needs_model = cfg.experiment != Experiment::LocalTimeOracle;
        let grid = match (&cfg.grid, needs_grid) {
            (Some(g), _) => self.grid(g),
            (None, true) => {
                self.push("grid", "missing section");
                None
            }
            (None, false) => None,
        };
        let model = match (&cfg.model, needs_model) {
            (Some(m), _) => self.model(m, cfg.grid.as_ref().map(|g| g.horizon)),
            (None, true) => {
                self.push("model", "missing section");
                None
            }
            (None, false) => None,
        };
        let job = if self.errors.is_empty() {
            self.job(cfg, model.as_ref())
        } else {
            None
        };
        let factors = match (&grid, n_paths) {
            (Some(g), Some(np)) if self.errors.is_empty() => {
                let m = model.as_ref().map_or(1, MarketModel::m);
                match FactorPaths::new(g.clone(), m, np, cfg.mc.master_seed) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        self.push("mc", core_message(&e));
                        None
                    }
                }
            }
            _ => None,
        };
        if !self.errors.is_empty() {
            return Err(ValidationErrors(self.errors));
        }
        let n_paths = n_paths.expect("checked above");
        Ok(Plan {
            config: cfg.clone(),
            model,
            factors,
            job: job.expect("checked above"),
            n_paths,
            threads,
            per_path: cfg
                .output
                .per_path
                .unwrap_or(n_paths <= PER_PATH_DEFAULT_LIMIT),
        })
    }
}

fn diverse(
    sigma: &DMatrix<f64>,
    g: &Option<Vec<f64>>,
    delta: f64,
    m_bound: Option<f64>,
    x0: &[f64],
) -> spt_lab_core::Result<MarketModel> {
    let n = sigma.nrows();
    let g = g.clone().unwrap_or_else(|| vec![0.0; n]);
    let m_bound = match m_bound {
        Some(m) => m,
        None => VolatilityMatrix::new(sigma)?.certificate().1,
    };
    diverse_market(sigma, &g, delta, m_bound, x0)
}
