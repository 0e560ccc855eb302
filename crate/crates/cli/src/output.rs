//! Summary files and CSV tables.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::config::Plan;
use crate::run::{Report, Table};

/// Start and end of a run in seconds since the epoch.
#[derive(Debug, Clone, Copy)]
pub struct Timestamps {
    pub started: u64,
    pub finished: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Full summary: provenance, config echo, results and checks.
pub fn summary_value(plan: &Plan, report: &Report, times: Timestamps) -> Value {
    let config = serde_json::to_value(&plan.config).expect("config is plain data");
    let checks: Map<String, Value> = report
        .checks
        .iter()
        .map(|c| (c.name.clone(), Value::Bool(c.passed)))
        .collect();
    json!({
        "provenance": {
            "artifact": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "experiment": report.experiment,
            "master_seed": plan.config.mc.master_seed,
            "n_paths": plan.n_paths,
            "threads": plan.threads.unwrap_or(0),
            "started_unix": times.started,
            "finished_unix": times.finished,
        },
        "config": config,
        "results": Value::Object(report.results.clone()),
        "checks": Value::Object(checks),
    })
}

/// TOML has no null, so absent values are dropped.
fn to_toml(v: &Value) -> Option<toml::Value> {
    Some(match v {
        Value::Null => return None,
        Value::Bool(b) => toml::Value::Boolean(*b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => toml::Value::String(s.clone()),
        Value::Array(a) => toml::Value::Array(a.iter().filter_map(to_toml).collect()),
        Value::Object(o) => toml::Value::Table(
            o.iter()
                .filter_map(|(k, v)| to_toml(v).map(|t| (k.clone(), t)))
                .collect(),
        ),
    })
}

pub fn write_table(path: &Path, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.render()))?;
    }
    w.flush()
}

/// Writes every file of a run and returns their paths.
pub fn write_outputs(plan: &Plan, report: &Report, times: Timestamps) -> io::Result<Vec<PathBuf>> {
    let dir = PathBuf::from(&plan.config.output.directory);
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for t in &report.tables {
        if (t.per_path && !plan.per_path) || (t.time_series && !plan.config.output.time_series) {
            continue;
        }
        let p = dir.join(format!("{}.csv", t.name));
        write_table(&p, t)?;
        written.push(p);
    }
    let summary = summary_value(plan, report, times);
    let text = toml::to_string(&to_toml(&summary).expect("summary is an object"))
        .map_err(io::Error::other)?;
    let p = dir.join("summary.toml");
    fs::write(&p, text)?;
    written.push(p);
    if plan.config.output.json {
        let p = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&p, text)?;
        written.push(p);
    }
    Ok(written)
}
