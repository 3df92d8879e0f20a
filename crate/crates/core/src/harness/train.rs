//! Training, evaluation and run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataConfig, ExperimentConfig};
use crate::balancing::{mmd_squared, BalanceDiagnostics};
use crate::data::{self, Dataset, SeriesMatrix, WindowPair};
use crate::error::{Error, Result};
use crate::kernels::{median_bandwidth, JointSequence, KernelFamily, KernelSpec};
use crate::models::{AdamState, LinearForecaster};
use crate::objectives::{self, ObjectiveKind};

/// Stream used for minibatch shuffling; stream 0 belongs to initialization.
const SHUFFLE_STREAM: u64 = 1;

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective value per batch.
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

/// Per-element forecast errors over a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub steps: usize,
    pub mean_abs_delta: f64,
    pub mean_penalty: f64,
    pub mean_mse_term: f64,
    /// Fraction of selected anchors with non-zero slack.
    pub active_fraction: f64,
}

/// Wall-clock measurements; the only part of a report that varies between
/// identical runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    pub mean_step_ms: f64,
    pub median_step_ms: f64,
    pub max_step_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub objective: String,
    /// Kernel used by the objective, with the bandwidth resolved.
    pub kernel: KernelSpec,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_val_mse: f64,
    pub test: EvalMetrics,
    /// Unbiased MMD² between real and forecast test joints, exponential
    /// kernel at the median bandwidth of the real test joints.
    pub test_mmd2: f64,
    pub test_mmd_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSummary>,
    pub timing: Timing,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// JSON without wall-clock fields; identical across repeated runs with
    /// the same config.
    pub fn to_deterministic_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self).map_err(|e| Error::Serde(e.to_string()))?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&value).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Everything produced by one training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub report: TrainReport,
    pub model: LinearForecaster,
    pub trace: Vec<StepRecord>,
    /// Per-step balancing diagnostics; empty for other objectives.
    pub diagnostics: Vec<BalanceDiagnostics>,
}

pub fn load_series(cfg: &ExperimentConfig) -> Result<SeriesMatrix> {
    match &cfg.data {
        DataConfig::Synthetic { .. } => {
            data::generate(&cfg.synthetic_spec().expect("synthetic source"))
        }
        DataConfig::Csv { path, date_column } => data::load_csv(path, *date_column),
    }
}

pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let series = load_series(cfg)?;
    if series.nrows() <= cfg.history + cfg.horizon {
        return Err(Error::Config(format!(
            "series has {} rows, need more than H + T = {}",
            series.nrows(),
            cfg.history + cfg.horizon
        )));
    }
    data::prepare(&series, &cfg.split, cfg.history, cfg.horizon)
}

fn real_joints(windows: &[&WindowPair]) -> Result<Vec<JointSequence>> {
    windows
        .iter()
        .map(|w| JointSequence::concat(w.x.view(), w.y.view()))
        .collect()
}

/// Mean squared and absolute error per element.
pub fn evaluate(model: &LinearForecaster, windows: &[WindowPair]) -> Result<EvalMetrics> {
    if windows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for w in windows {
        let pred = model.forward(&w.x)?;
        for (p, y) in pred.iter().zip(w.y.iter()) {
            let d = p - y;
            se += d * d;
            ae += d.abs();
        }
        count += w.y.len();
    }
    Ok(EvalMetrics {
        mse: se / count as f64,
        mae: ae / count as f64,
    })
}

/// Test-set MMD² and the bandwidth used for it.
pub fn forecast_mmd(model: &LinearForecaster, windows: &[WindowPair]) -> Result<(f64, f64)> {
    let refs: Vec<&WindowPair> = windows.iter().collect();
    let reals = real_joints(&refs)?;
    let forecasts = windows
        .iter()
        .map(|w| {
            let pred = model.forward(&w.x)?;
            JointSequence::concat(w.x.view(), pred.view())
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma = median_bandwidth(KernelFamily::Exponential, &reals)?;
    let kernel = KernelSpec::exponential(sigma);
    Ok((mmd_squared(&kernel, &reals, &forecasts)?.value, sigma))
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn min_batch(kind: &ObjectiveKind) -> usize {
    match kind {
        ObjectiveKind::KmbDf(cfg) => cfg.top_k.max(1),
        _ => 1,
    }
}

fn summarize(diags: &[BalanceDiagnostics]) -> Option<DiagnosticsSummary> {
    if diags.is_empty() {
        return None;
    }
    let n = diags.len() as f64;
    let mut abs_delta = 0.0;
    let mut active = 0usize;
    let mut selected = 0usize;
    for d in diags {
        abs_delta += d.deltas.iter().map(|v| v.abs()).sum::<f64>() / d.deltas.len() as f64;
        active += d.slacks.iter().filter(|&&s| s > 0.0).count();
        selected += d.slacks.len();
    }
    Some(DiagnosticsSummary {
        steps: diags.len(),
        mean_abs_delta: abs_delta / n,
        mean_penalty: diags.iter().map(|d| d.penalty_term).sum::<f64>() / n,
        mean_mse_term: diags.iter().map(|d| d.mse_term).sum::<f64>() / n,
        active_fraction: if selected == 0 {
            0.0
        } else {
            active as f64 / selected as f64
        },
    })
}

fn median_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    crate::kernels::median(&mut v)
}

/// Trains a linear forecaster under `cfg` and evaluates the best
/// checkpoint (by validation MSE) on the test split.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let dataset = prepare_dataset(cfg)?;
    train_on(cfg, &dataset)
}

pub fn train_on(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<TrainRun> {
    cfg.validate()?;
    let started = Instant::now();
    let channels = dataset.train[0].x.ncols();
    let mut model = LinearForecaster::new(cfg.history, cfg.horizon, channels, cfg.seed)?;
    let mut adam = AdamState::new(model.num_params(), cfg.lr);

    let median_sigma = if cfg.kernel.needs_median() {
        let order = epoch_order(cfg.seed, 1, dataset.train.len());
        let first: Vec<&WindowPair> = order
            .iter()
            .take(cfg.batch_size)
            .map(|&i| &dataset.train[i])
            .collect();
        Some(median_bandwidth(cfg.kernel.family, &real_joints(&first)?)?)
    } else {
        None
    };
    let kernel = cfg.kernel.resolve(median_sigma)?;
    let objective = cfg.objective.resolve(kernel.clone());
    objective.validate()?;
    let floor = min_batch(&objective);
    if dataset.train.len() < floor {
        return Err(Error::Config(format!(
            "{} training windows cannot fill a batch of {floor}",
            dataset.train.len()
        )));
    }

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params();
    let mut epochs = Vec::new();
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut step_ms = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(cfg.seed, epoch, dataset.train.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < floor {
                continue;
            }
            let t0 = Instant::now();
            let xs: Vec<Array2<f64>> = chunk.iter().map(|&i| dataset.train[i].x.clone()).collect();
            let ys: Vec<Array2<f64>> = chunk.iter().map(|&i| dataset.train[i].y.clone()).collect();
            let preds = model.forward_batch(&xs)?;
            let out = objectives::loss_and_grad(&objective, &xs, &ys, &preds)?;
            if !out.loss.is_finite() || out.grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    detail: format!("objective value {}", out.loss),
                });
            }
            let grads = model.backward_batch(&xs, &out.grads)?;
            adam.step_model(&mut model, &grads)?;
            if model.params().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    detail: "parameters after update".into(),
                });
            }
            step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            trace.push(StepRecord {
                epoch,
                step,
                loss: out.loss,
            });
            if let Some(d) = out.diagnostics {
                diagnostics.push(d);
            }
            loss_sum += out.loss;
            batches += 1;
        }
        let val = evaluate(&model, &dataset.val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_mse: val.mse,
            val_mae: val.mae,
        });
        match stopper.observe(epoch, val.mse) {
            StopDecision::Improved => best_params = model.params(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    model.set_params(&best_params)?;
    let test = evaluate(&model, &dataset.test)?;
    let (test_mmd2, test_mmd_sigma) = forecast_mmd(&model, &dataset.test)?;
    let total_s = started.elapsed().as_secs_f64();
    let timing = Timing {
        total_s,
        mean_step_ms: step_ms.iter().sum::<f64>() / step_ms.len().max(1) as f64,
        median_step_ms: median_of(&step_ms),
        max_step_ms: step_ms.iter().cloned().fold(0.0, f64::max),
    };
    let report = TrainReport {
        config: cfg.clone(),
        seed: cfg.seed,
        objective: objective.name().to_string(),
        kernel,
        train_windows: dataset.train.len(),
        val_windows: dataset.val.len(),
        test_windows: dataset.test.len(),
        epochs,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        stopped_early,
        best_val_mse: stopper.best(),
        test,
        test_mmd2,
        test_mmd_sigma,
        diagnostics: summarize(&diagnostics),
        timing,
    };
    Ok(TrainRun {
        report,
        model,
        trace,
        diagnostics,
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const CHECKPOINT_FILE: &str = "model.json";

/// Writes the report, loss trace, diagnostics log and checkpoint to `dir`.
pub fn write_run(run: &TrainRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(REPORT_FILE), &run.report.to_json()?)?;
    let mut csv = String::from("epoch,step,loss\n");
    for r in &run.trace {
        writeln!(csv, "{},{},{}", r.epoch, r.step, r.loss).expect("write to string");
    }
    write_file(&dir.join(TRACE_FILE), &csv)?;
    let mut jsonl = String::new();
    for d in &run.diagnostics {
        jsonl.push_str(&serde_json::to_string(d).map_err(|e| Error::Serde(e.to_string()))?);
        jsonl.push('\n');
    }
    write_file(&dir.join(DIAGNOSTICS_FILE), &jsonl)?;
    run.model.save(&dir.join(CHECKPOINT_FILE))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Evaluates a saved checkpoint on the test split of `cfg`'s data.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let model = LinearForecaster::load(checkpoint)?;
    if model.history() != cfg.history || model.horizon() != cfg.horizon {
        return Err(Error::Dimension(format!(
            "checkpoint is H={} T={}, config is H={} T={}",
            model.history(),
            model.horizon(),
            cfg.history,
            cfg.horizon
        )));
    }
    let dataset = prepare_dataset(cfg)?;
    let val = evaluate(&model, &dataset.val)?;
    let test = evaluate(&model, &dataset.test)?;
    let (test_mmd2, test_mmd_sigma) = forecast_mmd(&model, &dataset.test)?;
    Ok(EvalReport {
        val,
        test,
        test_mmd2,
        test_mmd_sigma,
        test_windows: dataset.test.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub val: EvalMetrics,
    pub test: EvalMetrics,
    pub test_mmd2: f64,
    pub test_mmd_sigma: f64,
    pub test_windows: usize,
}
