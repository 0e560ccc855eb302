//! Experiment runner behind the `spt-lab` binary.
//!
//! A run reads a TOML config, validates it completely, dispatches to the
//! matching core experiment and writes `summary.toml` (plus a JSON mirror)
//! and CSV tables into the output directory.

pub mod config;
pub mod output;
pub mod run;

use std::path::Path;

pub use config::{parse_config, ExperimentConfig, Overrides, Plan, ValidationErrors};
pub use run::{run, Report};

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success = 0,
    Validation = 2,
    Numeric = 3,
    Assertion = 4,
}

impl Outcome {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Loads `path`, applies `overrides`, runs and writes outputs. Messages go to
/// stderr; the summary path goes to stdout.
pub fn run_file(path: &Path, overrides: &Overrides) -> Outcome {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config: cannot read {}: {e}", path.display());
            return Outcome::Validation;
        }
    };
    let plan = match ExperimentConfig::from_toml(&text).and_then(|mut c| {
        c.apply(overrides);
        c.validate()
    }) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("validation failed:\n{e}");
            return Outcome::Validation;
        }
    };
    let started = output::unix_now();
    let report = match run(&plan) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return match e {
                spt_lab_core::Error::InvalidArgument(_)
                | spt_lab_core::Error::InvalidModel(_)
                | spt_lab_core::Error::InvalidInitialCondition(_) => Outcome::Validation,
                _ => Outcome::Numeric,
            };
        }
    };
    let times = output::Timestamps {
        started,
        finished: output::unix_now(),
    };
    match output::write_outputs(&plan, &report, times) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("writing outputs: {e}");
            return Outcome::Numeric;
        }
    }
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {}", c.name);
    }
    if report.all_passed() {
        Outcome::Success
    } else {
        Outcome::Assertion
    }
}
