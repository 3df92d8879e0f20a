//! Training objectives that share one contract: a scalar loss over a batch
//! of `(history, label, forecast)` triples and its gradient with respect to
//! every forecast.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::balancing::{self, BalanceConfig, BalanceDiagnostics};
use crate::error::{Error, Result};

pub const DEFAULT_FREQ_WEIGHT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    Mse,
    /// Simplified frequency-domain baseline: L1 distance between DFTs along
    /// time mixed with MSE by `freq_weight`.
    FreqL1 { freq_weight: f64 },
    KmbDf(BalanceConfig),
}

impl ObjectiveKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ObjectiveKind::Mse => Ok(()),
            ObjectiveKind::FreqL1 { freq_weight } => check_beta(*freq_weight),
            ObjectiveKind::KmbDf(cfg) => cfg.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Mse => "mse",
            ObjectiveKind::FreqL1 { .. } => "freq_l1",
            ObjectiveKind::KmbDf(_) => "kmb_df",
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("freq_weight must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Output of one objective evaluation.
#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub loss: f64,
    pub grads: Vec<Array2<f64>>,
    pub diagnostics: Option<BalanceDiagnostics>,
}

pub fn loss_and_grad(
    kind: &ObjectiveKind,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
) -> Result<ObjectiveOutput> {
    match kind {
        ObjectiveKind::Mse => Ok(ObjectiveOutput {
            loss: mse_loss(labels, forecasts)?.sum,
            grads: mse_grad(labels, forecasts)?,
            diagnostics: None,
        }),
        ObjectiveKind::FreqL1 { freq_weight } => Ok(ObjectiveOutput {
            loss: frequency_l1_loss(labels, forecasts, *freq_weight)?,
            grads: frequency_l1_grad(labels, forecasts, *freq_weight)?,
            diagnostics: None,
        }),
        ObjectiveKind::KmbDf(cfg) => {
            let (loss, diag, grads) =
                balancing::kmb_df_loss_and_grad(cfg, histories, labels, forecasts)?;
            Ok(ObjectiveOutput {
                loss,
                grads,
                diagnostics: Some(diag),
            })
        }
    }
}

pub fn loss(
    kind: &ObjectiveKind,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
) -> Result<f64> {
    match kind {
        ObjectiveKind::Mse => Ok(mse_loss(labels, forecasts)?.sum),
        ObjectiveKind::FreqL1 { freq_weight } => frequency_l1_loss(labels, forecasts, *freq_weight),
        ObjectiveKind::KmbDf(cfg) => {
            balancing::kmb_df_loss(cfg, histories, labels, forecasts).map(|(l, _)| l)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseLoss {
    /// Sum of squared errors over samples, steps and channels.
    pub sum: f64,
    /// `sum` divided by the element count.
    pub mean: f64,
}

pub fn mse_loss(labels: &[Array2<f64>], forecasts: &[Array2<f64>]) -> Result<MseLoss> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum = balancing::sum_squared_error(labels, forecasts)?;
    let count: usize = labels.iter().map(|y| y.len()).sum();
    Ok(MseLoss {
        sum,
        mean: sum / count.max(1) as f64,
    })
}

pub fn mse_grad(labels: &[Array2<f64>], forecasts: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    check_pairs(labels, forecasts)?;
    Ok(labels
        .iter()
        .zip(forecasts)
        .map(|(y, yh)| (yh - y) * 2.0)
        .collect())
}

fn check_pairs(labels: &[Array2<f64>], forecasts: &[Array2<f64>]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != forecasts.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} forecasts",
            labels.len(),
            forecasts.len()
        )));
    }
    for (n, (y, yh)) in labels.iter().zip(forecasts).enumerate() {
        if y.dim() != yh.dim() {
            return Err(Error::Dimension(format!("sample {n}: {:?} vs {:?}", y.dim(), yh.dim())));
        }
    }
    Ok(())
}

/// Twiddle table for a length-`t` DFT: `cos(2πkt/T)`, `sin(2πkt/T)` with
/// values within 1e-15 of zero snapped to exactly zero.
struct Dft {
    len: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Dft {
    fn new(len: usize) -> Self {
        let mut cos = Vec::with_capacity(len * len);
        let mut sin = Vec::with_capacity(len * len);
        for k in 0..len {
            for t in 0..len {
                let angle = 2.0 * PI * ((k * t) % len) as f64 / len as f64;
                let (s, c) = angle.sin_cos();
                cos.push(if c.abs() < 1e-15 { 0.0 } else { c });
                sin.push(if s.abs() < 1e-15 { 0.0 } else { s });
            }
        }
        Dft { len, cos, sin }
    }

    /// Real and imaginary parts of `Σ_t x_t e^{−2πikt/T}` for column `d`.
    fn coefficient(&self, diff: &Array2<f64>, d: usize, k: usize) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for t in 0..self.len {
            let x = diff[[t, d]];
            re += x * self.cos[k * self.len + t];
            im -= x * self.sin[k * self.len + t];
        }
        (re, im)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `β · Σₙ ‖DFT(Yₙ) − DFT(Ŷₙ)‖₁ + (1 − β) · mse`, where the L1 norm runs
/// over real and imaginary parts of every frequency and channel.
pub fn frequency_l1_loss(labels: &[Array2<f64>], forecasts: &[Array2<f64>], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_pairs(labels, forecasts)?;
    let mse = mse_loss(labels, forecasts)?.sum;
    if beta == 0.0 {
        return Ok(mse);
    }
    let dft = Dft::new(labels[0].nrows());
    let mut l1 = 0.0;
    for (y, yh) in labels.iter().zip(forecasts) {
        let diff = y - yh;
        for d in 0..diff.ncols() {
            for k in 0..dft.len {
                let (re, im) = dft.coefficient(&diff, d, k);
                l1 += re.abs() + im.abs();
            }
        }
    }
    Ok(beta * l1 + (1.0 - beta) * mse)
}

/// Gradient of [`frequency_l1_loss`] in each forecast, with `sign(0) = 0`.
pub fn frequency_l1_grad(
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
    beta: f64,
) -> Result<Vec<Array2<f64>>> {
    check_beta(beta)?;
    check_pairs(labels, forecasts)?;
    let dft = Dft::new(labels[0].nrows());
    let mut out = Vec::with_capacity(labels.len());
    for (y, yh) in labels.iter().zip(forecasts) {
        let diff = y - yh;
        let mut g = (yh - y) * (2.0 * (1.0 - beta));
        if beta > 0.0 {
            for d in 0..diff.ncols() {
                for k in 0..dft.len {
                    let (re, im) = dft.coefficient(&diff, d, k);
                    let (sr, si) = (sign(re), sign(im));
                    if sr == 0.0 && si == 0.0 {
                        continue;
                    }
                    // diff = y − ŷ, so ∂re/∂ŷ_t = −cos and ∂im/∂ŷ_t = +sin.
                    for t in 0..dft.len {
                        let idx = k * dft.len + t;
                        g[[t, d]] += beta * (-sr * dft.cos[idx] + si * dft.sin[idx]);
                    }
                }
            }
        }
        out.push(g);
    }
    Ok(out)
}
