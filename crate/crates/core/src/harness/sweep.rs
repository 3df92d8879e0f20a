//! One-parameter sweeps compared against the α = 0 baseline.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{prepare_dataset, train_on, write_file, EvalMetrics, TrainReport};
use crate::error::{Error, Result};

pub const ALPHA_KEY: &str = "objective.alpha";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Dotted config key, e.g. `objective.margin_c`.
    pub param: String,
    /// TOML literals, applied one at a time.
    pub values: Vec<String>,
}

impl SweepGrid {
    pub fn new(param: impl Into<String>, values: impl IntoIterator<Item = impl ToString>) -> Self {
        SweepGrid {
            param: param.into(),
            values: values.into_iter().map(|v| v.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_mse_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_mae_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub baseline: TrainReport,
    pub rows: Vec<SweepRow>,
    /// Reports of the successful grid points, aligned with `rows`.
    pub reports: Vec<Option<TrainReport>>,
}

fn pct(value: f64, base: f64) -> f64 {
    (value - base) / base * 100.0
}

fn is_alpha_zero(grid: &SweepGrid, value: &str) -> bool {
    grid.param == ALPHA_KEY && value.trim().parse::<f64>().map(|v| v == 0.0).unwrap_or(false)
}

/// Runs every grid point on the same dataset. A failing point is recorded
/// in its row and does not stop the sweep; only a failing baseline does.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<SweepResult> {
    if grid.values.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    base.validate()?;
    let dataset = prepare_dataset(base)?;
    let baseline_cfg = base.with_overrides(&[format!("{ALPHA_KEY}=0.0")])?;
    let baseline = train_on(&baseline_cfg, &dataset)?.report;

    let mut rows = Vec::with_capacity(grid.values.len());
    let mut reports = Vec::with_capacity(grid.values.len());
    for value in &grid.values {
        let outcome = if is_alpha_zero(grid, value) {
            Ok(baseline.clone())
        } else {
            base.with_overrides(&[format!("{}={}", grid.param, value)])
                .and_then(|cfg| train_on(&cfg, &dataset))
                .map(|run| run.report)
        };
        let row = match &outcome {
            Ok(report) => SweepRow {
                param: grid.param.clone(),
                value: value.clone(),
                metrics: Some(report.test),
                delta_mse_pct: Some(pct(report.test.mse, baseline.test.mse)),
                delta_mae_pct: Some(pct(report.test.mae, baseline.test.mae)),
                error: None,
            },
            Err(e) => SweepRow {
                param: grid.param.clone(),
                value: value.clone(),
                metrics: None,
                delta_mse_pct: None,
                delta_mae_pct: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
        reports.push(outcome.ok());
    }
    Ok(SweepResult {
        baseline,
        rows,
        reports,
    })
}

impl SweepResult {
    /// `param,value,mse,mae,delta_mse_pct,delta_mae_pct,error`; the first
    /// row is the α = 0 baseline.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,value,mse,mae,delta_mse_pct,delta_mae_pct,error\n");
        writeln!(
            out,
            "baseline,{ALPHA_KEY}=0,{},{},0,0,",
            self.baseline.test.mse, self.baseline.test.mae
        )
        .expect("write to string");
        for r in &self.rows {
            let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.param,
                csv_field(&r.value),
                num(r.metrics.map(|m| m.mse)),
                num(r.metrics.map(|m| m.mae)),
                num(r.delta_mse_pct),
                num(r.delta_mae_pct),
                csv_field(r.error.as_deref().unwrap_or("")),
            )
            .expect("write to string");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("sweep.csv"), &self.to_csv())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        write_file(&dir.join("sweep.json"), &json)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
