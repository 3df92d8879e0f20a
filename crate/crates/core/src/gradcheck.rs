//! Central finite-difference checks for every analytic gradient in the
//! crate.
//!
//! Errors are norm-wise: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`,
//! which is 0 when both vectors vanish.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::balancing::{self, AnchorMode, BalanceConfig, HingeMode};
use crate::error::Result;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::models::LinearForecaster;
use crate::objectives::{self, ObjectiveKind};

pub const FD_STEP: f64 = 1e-5;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// A random batch of `n` samples with histories `h×d` and labels/forecasts
/// `t×d`, entries uniform in `[−1, 1]`.
#[derive(Clone, Debug)]
pub struct RandomBatch {
    pub histories: Vec<Array2<f64>>,
    pub labels: Vec<Array2<f64>>,
    pub forecasts: Vec<Array2<f64>>,
}

impl RandomBatch {
    pub fn sample(rng: &mut impl Rng, n: usize, h: usize, t: usize, d: usize) -> Self {
        let mut mat = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0));
        let histories = (0..n).map(|_| mat(h, d)).collect();
        let labels = (0..n).map(|_| mat(t, d)).collect();
        let forecasts = (0..n).map(|_| mat(t, d)).collect();
        RandomBatch {
            histories,
            labels,
            forecasts,
        }
    }
}

fn flatten(mats: &[Array2<f64>]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.iter().copied()).collect()
}

fn unflatten(flat: &[f64], like: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut offset = 0;
    like.iter()
        .map(|m| {
            let len = m.len();
            let out = Array2::from_shape_vec(m.dim(), flat[offset..offset + len].to_vec())
                .expect("shape taken from template");
            offset += len;
            out
        })
        .collect()
}

/// Compares [`balancing::kmb_df_grad`] with finite differences of the loss,
/// holding the anchor selection at the one the analytic pass picked.
pub fn check_kmb_df(cfg: &BalanceConfig, batch: &RandomBatch) -> Result<f64> {
    let (_, diag, grads) =
        balancing::kmb_df_loss_and_grad(cfg, &batch.histories, &batch.labels, &batch.forecasts)?;
    let selected = diag.selected.clone();
    let x = flatten(&batch.forecasts);
    let numeric = central_difference(
        |p| {
            let f = unflatten(p, &batch.forecasts);
            balancing::kmb_df_loss_with_selection(cfg, &batch.histories, &batch.labels, &f, &selected)
                .map(|(l, _)| l)
                .unwrap_or(f64::NAN)
        },
        &x,
        FD_STEP,
    );
    Ok(relative_error(&flatten(&grads), &numeric))
}

pub fn check_mse(batch: &RandomBatch) -> Result<f64> {
    let grads = objectives::mse_grad(&batch.labels, &batch.forecasts)?;
    let numeric = central_difference(
        |p| {
            let f = unflatten(p, &batch.forecasts);
            objectives::mse_loss(&batch.labels, &f).map(|l| l.sum).unwrap_or(f64::NAN)
        },
        &flatten(&batch.forecasts),
        FD_STEP,
    );
    Ok(relative_error(&flatten(&grads), &numeric))
}

pub fn check_frequency_l1(batch: &RandomBatch, beta: f64) -> Result<f64> {
    let grads = objectives::frequency_l1_grad(&batch.labels, &batch.forecasts, beta)?;
    let numeric = central_difference(
        |p| {
            let f = unflatten(p, &batch.forecasts);
            objectives::frequency_l1_loss(&batch.labels, &f, beta).unwrap_or(f64::NAN)
        },
        &flatten(&batch.forecasts),
        FD_STEP,
    );
    Ok(relative_error(&flatten(&grads), &numeric))
}

/// Smallest nonzero `|Re|`/`|Im|` over all DFT coefficients of `Y − Ŷ`.
/// Finite differences are unreliable when this is tiny.
pub fn min_dft_magnitude(batch: &RandomBatch) -> f64 {
    let t = batch.labels[0].nrows();
    let mut smallest = f64::INFINITY;
    for (y, yh) in batch.labels.iter().zip(&batch.forecasts) {
        let diff = y - yh;
        for d in 0..diff.ncols() {
            for k in 0..t {
                let (mut re, mut im) = (0.0, 0.0);
                for s in 0..t {
                    let angle = 2.0 * std::f64::consts::PI * ((k * s) % t) as f64 / t as f64;
                    re += diff[[s, d]] * angle.cos();
                    im -= diff[[s, d]] * angle.sin();
                }
                for c in [re.abs(), im.abs()] {
                    if c > 1e-12 {
                        smallest = smallest.min(c);
                    }
                }
            }
        }
    }
    smallest
}

/// Gradient of `objective(model(X))` in the model parameters against finite
/// differences over the parameters.
pub fn check_model_end_to_end(
    kind: &ObjectiveKind,
    model: &LinearForecaster,
    histories: &[Array2<f64>],
    labels: &[Array2<f64>],
) -> Result<f64> {
    let forecasts = model.forward_batch(histories)?;
    let out = objectives::loss_and_grad(kind, histories, labels, &forecasts)?;
    let analytic = model.backward_batch(histories, &out.grads)?.flatten();
    let pinned = out.diagnostics.as_ref().map(|d| d.selected.clone());
    let numeric = central_difference(
        |p| {
            let mut m = model.clone();
            if m.set_params(p).is_err() {
                return f64::NAN;
            }
            let Ok(f) = m.forward_batch(histories) else {
                return f64::NAN;
            };
            let value = match (kind, &pinned) {
                (ObjectiveKind::KmbDf(cfg), Some(sel)) => {
                    balancing::kmb_df_loss_with_selection(cfg, histories, labels, &f, sel).map(|(l, _)| l)
                }
                _ => objectives::loss(kind, histories, labels, &f),
            };
            value.unwrap_or(f64::NAN)
        },
        &model.params(),
        FD_STEP,
    );
    Ok(relative_error(&analytic, &numeric))
}

/// Result of one group of gradient checks.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl SuiteEntry {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.instances > 0 && self.max_rel_error < tolerance
    }
}

fn random_kernel(rng: &mut impl Rng, family: KernelFamily) -> KernelSpec {
    let mut spec = KernelSpec::new(family);
    spec.sigma = rng.random_range(0.5..2.0);
    spec.degree = rng.random_range(1..=3);
    spec
}

fn small_shape(rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    (
        rng.random_range(3..=6),
        rng.random_range(1..=4),
        rng.random_range(1..=3),
        rng.random_range(1..=2),
    )
}

const MARGINS: [f64; 5] = [0.0005, 0.001, 0.005, 0.01, 0.05];

fn random_balance(rng: &mut impl Rng, n: usize, family: KernelFamily, anchor: AnchorMode, hinge: HingeMode) -> BalanceConfig {
    BalanceConfig::new(
        rng.random_range(0.1..=1.0),
        rng.random_range(1..=n),
        MARGINS[rng.random_range(0..MARGINS.len())],
        random_kernel(rng, family),
    )
    .with_modes(anchor, hinge)
}

// Keeps finite differences away from the hinge kinks.
fn clear_of_kinks(cfg: &BalanceConfig, batch: &RandomBatch) -> bool {
    let Ok((_, diag)) = balancing::kmb_df_loss(cfg, &batch.histories, &batch.labels, &batch.forecasts) else {
        return false;
    };
    diag.selected.iter().all(|&k| {
        let d = diag.deltas[k];
        let c = cfg.margin_c;
        (d - c).abs() > 1e-4 && (d + c).abs() > 1e-4
    })
}

/// The full gradient suite: the balancing objective over both anchor modes,
/// both hinge modes and all five kernels, then MSE, frequency-L1 and
/// end-to-end model gradients. `per_case` random instances per group.
pub fn run_suite(seed: u64, per_case: usize) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    for family in KernelFamily::ALL {
        for anchor in [AnchorMode::Forecast, AnchorMode::Real] {
            for hinge in [HingeMode::Canonical, HingeMode::Shifted] {
                let mut worst: f64 = 0.0;
                let mut done = 0;
                while done < per_case {
                    let (n, h, t, d) = small_shape(&mut rng);
                    let batch = RandomBatch::sample(&mut rng, n, h, t, d);
                    let cfg = random_balance(&mut rng, n, family, anchor, hinge);
                    if !clear_of_kinks(&cfg, &batch) {
                        continue;
                    }
                    worst = worst.max(check_kmb_df(&cfg, &batch)?);
                    done += 1;
                }
                entries.push(SuiteEntry {
                    name: format!("kmb_df_grad/{family:?}/{anchor:?}/{hinge:?}").to_lowercase(),
                    instances: done,
                    max_rel_error: worst,
                });
            }
        }
    }

    let mut worst: f64 = 0.0;
    for _ in 0..per_case {
        let (n, h, t, d) = small_shape(&mut rng);
        worst = worst.max(check_mse(&RandomBatch::sample(&mut rng, n, h, t, d))?);
    }
    entries.push(SuiteEntry {
        name: "mse_grad".into(),
        instances: per_case,
        max_rel_error: worst,
    });

    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < per_case {
        let (n, h, t, d) = small_shape(&mut rng);
        let batch = RandomBatch::sample(&mut rng, n, h, t, d);
        if min_dft_magnitude(&batch) < 1e-7 {
            continue;
        }
        let beta = rng.random_range(0.0..=1.0);
        worst = worst.max(check_frequency_l1(&batch, beta)?);
        done += 1;
    }
    entries.push(SuiteEntry {
        name: "freq_l1_grad".into(),
        instances: done,
        max_rel_error: worst,
    });

    let mut kinds: Vec<(String, Box<dyn Fn(&mut ChaCha8Rng, usize) -> ObjectiveKind>)> = vec![
        ("model/mse".into(), Box::new(|_, _| ObjectiveKind::Mse)),
        (
            "model/freq_l1".into(),
            Box::new(|r, _| ObjectiveKind::FreqL1 {
                freq_weight: r.random_range(0.0..=1.0),
            }),
        ),
    ];
    for family in KernelFamily::ALL {
        kinds.push((
            format!("model/kmb_df/{family:?}").to_lowercase(),
            Box::new(move |r, n| {
                let anchor = if r.random_bool(0.5) { AnchorMode::Forecast } else { AnchorMode::Real };
                let hinge = if r.random_bool(0.5) { HingeMode::Canonical } else { HingeMode::Shifted };
                ObjectiveKind::KmbDf(random_balance(r, n, family, anchor, hinge))
            }),
        ));
    }
    for (name, make) in kinds {
        let mut worst: f64 = 0.0;
        let mut done = 0;
        while done < per_case {
            let (n, h, t, d) = small_shape(&mut rng);
            let model = LinearForecaster::new(h, t, d, rng.random())?;
            let batch = RandomBatch::sample(&mut rng, n, h, t, d);
            let kind = make(&mut rng, n);
            let forecasts = model.forward_batch(&batch.histories)?;
            let probe = RandomBatch {
                forecasts,
                ..batch.clone()
            };
            let usable = match &kind {
                ObjectiveKind::KmbDf(cfg) => clear_of_kinks(cfg, &probe),
                ObjectiveKind::FreqL1 { .. } => min_dft_magnitude(&probe) >= 1e-7,
                ObjectiveKind::Mse => true,
            };
            if !usable {
                continue;
            }
            worst = worst.max(check_model_end_to_end(&kind, &model, &batch.histories, &batch.labels)?);
            done += 1;
        }
        entries.push(SuiteEntry {
            name,
            instances: done,
            max_rel_error: worst,
        });
    }
    Ok(entries)
}
