//! Kernelized moment balancing between real joints `Z = concat(X, Y)` and
//! forecast joints `Ẑ = concat(X, Ŷ)`.
//!
//! Every sample in a batch anchors one kernel balancing function
//! `K(·, anchor)`. Its informativeness score `δ_k` is the gap between the
//! batch sums of that function over the real and forecast sides. The `K`
//! anchors with the largest `|δ_k|` are penalized through a hinge with
//! margin `C`, and the penalty is mixed with the summed squared error:
//!
//! ```text
//! total = α · Σ_k ξ(δ_{n_k}) + (1 − α) · Σ_n ‖Y⁽ⁿ⁾ − Ŷ⁽ⁿ⁾‖²
//! ```

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{JointSequence, KernelSpec};

/// Which side of the pair supplies the anchor of the second kernel sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// `δ_k = Σₙ K(Zₙ, Z_k) − Σₙ K(Zₙ, Ẑ_k)`. Only the selected anchors'
    /// forecasts receive penalty gradient.
    #[default]
    Forecast,
    /// `δ_k = Σₙ K(Zₙ, Z_k) − Σₙ K(Ẑₙ, Z_k)`. Every forecast in the batch
    /// receives penalty gradient.
    Real,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeMode {
    /// `ξ = [δ − C]₊ + [−δ − C]₊ = [|δ| − C]₊`, the smallest slack that
    /// satisfies `−C − ξ ≤ δ ≤ C + ξ`.
    #[default]
    Canonical,
    /// `ξ = [−C − δ]₊ + [δ + C]₊ = |δ + C|`.
    Shifted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub alpha: f64,
    pub top_k: usize,
    pub margin_c: f64,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub anchor_mode: AnchorMode,
    #[serde(default)]
    pub hinge_mode: HingeMode,
}

impl BalanceConfig {
    pub fn new(alpha: f64, top_k: usize, margin_c: f64, kernel: KernelSpec) -> Self {
        BalanceConfig {
            alpha,
            top_k,
            margin_c,
            kernel,
            anchor_mode: AnchorMode::default(),
            hinge_mode: HingeMode::default(),
        }
    }

    pub fn with_modes(mut self, anchor_mode: AnchorMode, hinge_mode: HingeMode) -> Self {
        self.anchor_mode = anchor_mode;
        self.hinge_mode = hinge_mode;
        self
    }

    /// Checks everything that does not depend on the batch.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.margin_c >= 0.0 && self.margin_c.is_finite()) {
            return Err(Error::Config(format!(
                "margin_c must be finite and >= 0, got {}",
                self.margin_c
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        self.kernel.validate()
    }
}

/// Intermediates of one evaluation of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceDiagnostics {
    /// `δ_k` for every anchor in the batch.
    pub deltas: Vec<f64>,
    /// Selected anchor indices, largest `|δ|` first.
    pub selected: Vec<usize>,
    /// `ξ` for each selected anchor, aligned with `selected`.
    pub slacks: Vec<f64>,
    /// `Σ ξ`, before the α weight.
    pub penalty_term: f64,
    /// `Σₙ ‖Yₙ − Ŷₙ‖²`, before the (1 − α) weight.
    pub mse_term: f64,
    pub total: f64,
}

pub fn informativeness_scores(
    cfg: &BalanceConfig,
    reals: &[JointSequence],
    forecasts: &[JointSequence],
) -> Result<Vec<f64>> {
    cfg.kernel.validate()?;
    check_joints(reals, forecasts)?;
    Ok(scores(cfg, reals, forecasts))
}

fn check_joints(reals: &[JointSequence], forecasts: &[JointSequence]) -> Result<()> {
    if reals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if reals.len() != forecasts.len() {
        return Err(Error::Dimension(format!(
            "{} real joints but {} forecast joints",
            reals.len(),
            forecasts.len()
        )));
    }
    let shape = reals[0].shape();
    let history = reals[0].history_len();
    for (n, (z, zh)) in reals.iter().zip(forecasts).enumerate() {
        if z.shape() != shape || zh.shape() != shape {
            return Err(Error::Dimension(format!("joint {n} has a different shape")));
        }
        if z.history_len() != history || zh.history_len() != history {
            return Err(Error::Dimension(format!("joint {n} has a different history length")));
        }
        let off = z.label_offset();
        if z.as_slice()[..off] != zh.as_slice()[..off] {
            return Err(Error::Domain(format!(
                "joint {n}: real and forecast histories differ"
            )));
        }
    }
    Ok(())
}

/// Anchors scored together so each sample is read once per block.
const ANCHOR_BLOCK: usize = 4;

// Per-anchor sums run over n in ascending order whatever the thread count.
fn scores(cfg: &BalanceConfig, reals: &[JointSequence], forecasts: &[JointSequence]) -> Vec<f64> {
    let spec = &cfg.kernel;
    let starts: Vec<usize> = (0..reals.len()).step_by(ANCHOR_BLOCK).collect();
    let blocks: Vec<Vec<f64>> = starts
        .into_par_iter()
        .map(|start| {
            let anchors = start..(start + ANCHOR_BLOCK).min(reals.len());
            let mut real_sum = vec![0.0; anchors.len()];
            let mut forecast_sum = vec![0.0; anchors.len()];
            for (z, zh) in reals.iter().zip(forecasts) {
                let (z, zh) = (z.as_slice(), zh.as_slice());
                for (j, k) in anchors.clone().enumerate() {
                    let anchor = reals[k].as_slice();
                    real_sum[j] += spec.eval_flat(z, anchor);
                    forecast_sum[j] += match cfg.anchor_mode {
                        AnchorMode::Forecast => spec.eval_flat(z, forecasts[k].as_slice()),
                        AnchorMode::Real => spec.eval_flat(zh, anchor),
                    };
                }
            }
            real_sum.iter().zip(&forecast_sum).map(|(r, f)| r - f).collect()
        })
        .collect();
    blocks.concat()
}

/// Indices of the `k` largest `|δ|`, ordered by descending `|δ|` and then
/// ascending index.
pub fn select_top_k(deltas: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > deltas.len() {
        return Err(Error::Config(format!(
            "top_k = {k} must lie in [1, {}]",
            deltas.len()
        )));
    }
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&i, &j| deltas[j].abs().total_cmp(&deltas[i].abs()).then(i.cmp(&j)));
    order.truncate(k);
    Ok(order)
}

pub fn hinge_slack(delta: f64, margin_c: f64, mode: HingeMode) -> f64 {
    match mode {
        HingeMode::Canonical => (delta - margin_c).max(0.0) + (-delta - margin_c).max(0.0),
        HingeMode::Shifted => (-margin_c - delta).max(0.0) + (delta + margin_c).max(0.0),
    }
}

/// Subgradient of [`hinge_slack`] in `δ`; 0 at the kinks.
pub fn hinge_slope(delta: f64, margin_c: f64, mode: HingeMode) -> f64 {
    let (lo, hi) = match mode {
        HingeMode::Canonical => (-margin_c, margin_c),
        HingeMode::Shifted => (-margin_c, -margin_c),
    };
    if delta > hi {
        1.0
    } else if delta < lo {
        -1.0
    } else {
        0.0
    }
}

/// `Σₙ ‖Yₙ − Ŷₙ‖²`, accumulated sample by sample in index order.
pub(crate) fn sum_squared_error(labels: &[Array2<f64>], forecasts: &[Array2<f64>]) -> Result<f64> {
    if labels.len() != forecasts.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} forecasts",
            labels.len(),
            forecasts.len()
        )));
    }
    let mut total = 0.0;
    for (n, (y, yh)) in labels.iter().zip(forecasts).enumerate() {
        if y.dim() != yh.dim() {
            return Err(Error::Dimension(format!(
                "sample {n}: label {:?} vs forecast {:?}",
                y.dim(),
                yh.dim()
            )));
        }
        total += y.iter().zip(yh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

struct Batch {
    reals: Vec<JointSequence>,
    forecasts: Vec<JointSequence>,
}

fn build_batch(
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
) -> Result<Batch> {
    if histories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if histories.len() != labels.len() || labels.len() != forecasts.len() {
        return Err(Error::Dimension(format!(
            "batch lengths differ: {} histories, {} labels, {} forecasts",
            histories.len(),
            labels.len(),
            forecasts.len()
        )));
    }
    let label_shape = labels[0].dim();
    let history_shape = histories[0].dim();
    let mut reals = Vec::with_capacity(histories.len());
    let mut preds = Vec::with_capacity(histories.len());
    for n in 0..histories.len() {
        if histories[n].dim() != history_shape
            || labels[n].dim() != label_shape
            || forecasts[n].dim() != label_shape
        {
            return Err(Error::Dimension(format!("sample {n} has inconsistent shapes")));
        }
        reals.push(JointSequence::concat(histories[n].view(), labels[n].view())?);
        preds.push(JointSequence::concat(histories[n].view(), forecasts[n].view())?);
    }
    Ok(Batch {
        reals,
        forecasts: preds,
    })
}

fn compose(
    cfg: &BalanceConfig,
    deltas: Vec<f64>,
    selected: Vec<usize>,
    mse_term: f64,
) -> BalanceDiagnostics {
    let slacks: Vec<f64> = selected
        .iter()
        .map(|&k| hinge_slack(deltas[k], cfg.margin_c, cfg.hinge_mode))
        .collect();
    let penalty_term: f64 = slacks.iter().sum();
    let total = cfg.alpha * penalty_term + (1.0 - cfg.alpha) * mse_term;
    BalanceDiagnostics {
        deltas,
        selected,
        slacks,
        penalty_term,
        mse_term,
        total,
    }
}

fn evaluate(
    cfg: &BalanceConfig,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
    pinned: Option<&[usize]>,
) -> Result<(Batch, BalanceDiagnostics)> {
    cfg.validate()?;
    let batch = build_batch(histories, labels, forecasts)?;
    let deltas = scores(cfg, &batch.reals, &batch.forecasts);
    let selected = match pinned {
        Some(sel) => {
            if let Some(&bad) = sel.iter().find(|&&k| k >= deltas.len()) {
                return Err(Error::Config(format!("selected index {bad} out of range")));
            }
            sel.to_vec()
        }
        None => select_top_k(&deltas, cfg.top_k)?,
    };
    let mse_term = sum_squared_error(labels, forecasts)?;
    let diag = compose(cfg, deltas, selected, mse_term);
    Ok((batch, diag))
}

pub fn kmb_df_loss(
    cfg: &BalanceConfig,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
) -> Result<(f64, BalanceDiagnostics)> {
    let (_, diag) = evaluate(cfg, histories, labels, forecasts, None)?;
    Ok((diag.total, diag))
}

/// The objective with the anchor set fixed to `selected` instead of chosen
/// by `|δ|`. Used to check gradients, which treat the selection as constant.
pub fn kmb_df_loss_with_selection(
    cfg: &BalanceConfig,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
    selected: &[usize],
) -> Result<(f64, BalanceDiagnostics)> {
    let (_, diag) = evaluate(cfg, histories, labels, forecasts, Some(selected))?;
    Ok((diag.total, diag))
}

pub fn kmb_df_grad(
    cfg: &BalanceConfig,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
) -> Result<Vec<Array2<f64>>> {
    kmb_df_loss_and_grad(cfg, histories, labels, forecasts).map(|(_, _, g)| g)
}

/// Loss, diagnostics and `∂total/∂Ŷ⁽ⁿ⁾` from one pass over the batch.
pub fn kmb_df_loss_and_grad(
    cfg: &BalanceConfig,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
) -> Result<(f64, BalanceDiagnostics, Vec<Array2<f64>>)> {
    let (batch, diag) = evaluate(cfg, histories, labels, forecasts, None)?;
    let grads = gradient(cfg, &batch, labels, forecasts, &diag);
    Ok((diag.total, diag, grads))
}

/// Backward pass only, reusing the selection in `diag` from a prior
/// forward pass over the same batch.
pub fn kmb_df_backward(
    cfg: &BalanceConfig,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
    diag: &BalanceDiagnostics,
) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let batch = build_batch(histories, labels, forecasts)?;
    if diag.deltas.len() != batch.reals.len()
        || diag.selected.iter().any(|&k| k >= batch.reals.len())
    {
        return Err(Error::Dimension(
            "diagnostics do not belong to this batch".into(),
        ));
    }
    Ok(gradient(cfg, &batch, labels, forecasts, diag))
}

fn gradient(
    cfg: &BalanceConfig,
    batch: &Batch,
    labels: &[Array2<f64>],
    forecasts: &[Array2<f64>],
    diag: &BalanceDiagnostics,
) -> Vec<Array2<f64>> {
    let mse_scale = 2.0 * (1.0 - cfg.alpha);
    let mut grads: Vec<Array2<f64>> = labels
        .iter()
        .zip(forecasts)
        .map(|(y, yh)| (yh - y) * mse_scale)
        .collect();

    let offset = batch.reals[0].label_offset();
    let len = batch.reals[0].as_slice().len();
    let spec = &cfg.kernel;
    let mut scratch = vec![0.0; len];

    for &k in &diag.selected {
        let slope = hinge_slope(diag.deltas[k], cfg.margin_c, cfg.hinge_mode);
        if slope == 0.0 || cfg.alpha == 0.0 {
            continue;
        }
        // δ_k enters with a minus sign on the forecast side.
        let coef = -cfg.alpha * slope;
        match cfg.anchor_mode {
            AnchorMode::Forecast => {
                scratch.fill(0.0);
                let anchor = batch.forecasts[k].as_slice();
                for z in &batch.reals {
                    spec.accumulate_grad_b(z.as_slice(), anchor, coef, &mut scratch);
                }
                add_label_part(&mut grads[k], &scratch[offset..]);
            }
            AnchorMode::Real => {
                let anchor = batch.reals[k].as_slice();
                for (n, zh) in batch.forecasts.iter().enumerate() {
                    scratch.fill(0.0);
                    // K is symmetric, so ∂K(Ẑₙ, Z_k)/∂Ẑₙ = ∂K(Z_k, Ẑₙ)/∂Ẑₙ.
                    spec.accumulate_grad_b(anchor, zh.as_slice(), coef, &mut scratch);
                    add_label_part(&mut grads[n], &scratch[offset..]);
                }
            }
        }
    }
    grads
}

fn add_label_part(grad: &mut Array2<f64>, part: &[f64]) {
    for (g, p) in grad.iter_mut().zip(part) {
        *g += p;
    }
}

/// Squared maximum mean discrepancy between two samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    pub value: f64,
    /// Set when a sample had a single element and the biased V-statistic
    /// was used instead of the unbiased estimate.
    pub biased: bool,
}

/// Unbiased two-sample MMD² estimate, falling back to the V-statistic when
/// either sample is a singleton.
///
/// Equal-size samples use the paired U-statistic
/// `1/(m(m−1)) Σ_{i≠j} [K(pᵢ,pⱼ) + K(qᵢ,qⱼ) − K(pᵢ,qⱼ) − K(pⱼ,qᵢ)]`, which is
/// zero when the two samples are the same list. Unequal sizes use
/// `Σ_{i≠j}K(pᵢ,pⱼ)/(m(m−1)) + Σ_{i≠j}K(qᵢ,qⱼ)/(n(n−1)) − 2ΣΣK(pᵢ,qⱼ)/(mn)`.
pub fn mmd_squared(
    kernel: &KernelSpec,
    sample_p: &[JointSequence],
    sample_q: &[JointSequence],
) -> Result<MmdEstimate> {
    let sums = mmd_sums(kernel, sample_p, sample_q)?;
    let (m, n) = (sample_p.len() as f64, sample_q.len() as f64);
    if sample_p.len() < 2 || sample_q.len() < 2 {
        return Ok(MmdEstimate {
            value: sums.v_statistic(m, n),
            biased: true,
        });
    }
    let value = if sample_p.len() == sample_q.len() {
        // Paired U-statistic: i = j is dropped from the cross term as well.
        (sums.pp - sums.pp_diag + sums.qq - sums.qq_diag - 2.0 * (sums.pq - sums.pq_diag))
            / (m * (m - 1.0))
    } else {
        (sums.pp - sums.pp_diag) / (m * (m - 1.0)) + (sums.qq - sums.qq_diag) / (n * (n - 1.0))
            - 2.0 * sums.pq / (m * n)
    };
    Ok(MmdEstimate {
        value,
        biased: false,
    })
}

/// Biased V-statistic MMD², always ≥ 0 for positive-definite kernels.
pub fn mmd_squared_biased(
    kernel: &KernelSpec,
    sample_p: &[JointSequence],
    sample_q: &[JointSequence],
) -> Result<f64> {
    let sums = mmd_sums(kernel, sample_p, sample_q)?;
    Ok(sums.v_statistic(sample_p.len() as f64, sample_q.len() as f64))
}

struct MmdSums {
    pp: f64,
    pp_diag: f64,
    qq: f64,
    qq_diag: f64,
    pq: f64,
    /// `Σᵢ K(pᵢ, qᵢ)` over the common prefix.
    pq_diag: f64,
}

impl MmdSums {
    fn v_statistic(&self, m: f64, n: f64) -> f64 {
        self.pp / (m * m) + self.qq / (n * n) - 2.0 * self.pq / (m * n)
    }
}

fn mmd_sums(kernel: &KernelSpec, p: &[JointSequence], q: &[JointSequence]) -> Result<MmdSums> {
    kernel.validate()?;
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let shape = p[0].shape();
    if p.iter().chain(q).any(|z| z.shape() != shape) {
        return Err(Error::Dimension("MMD samples must share one shape".into()));
    }
    let block = |a: &[JointSequence], b: &[JointSequence]| -> f64 {
        a.par_iter()
            .map(|x| b.iter().map(|y| kernel.eval_flat(x.as_slice(), y.as_slice())).sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum()
    };
    let diag = |a: &[JointSequence]| -> f64 {
        a.iter().map(|x| kernel.eval_flat(x.as_slice(), x.as_slice())).sum()
    };
    Ok(MmdSums {
        pp: block(p, p),
        pp_diag: diag(p),
        qq: block(q, q),
        qq_diag: diag(q),
        pq: block(p, q),
        pq_diag: p
            .iter()
            .zip(q)
            .map(|(x, y)| kernel.eval_flat(x.as_slice(), y.as_slice()))
            .sum(),
    })
}
