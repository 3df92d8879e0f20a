//! Permutation two-sample test on forecast joints.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::prepare_dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, median_bandwidth, JointSequence, KernelFamily, KernelSpec};
use crate::models::LinearForecaster;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdTestResult {
    pub mmd2: f64,
    pub sigma: f64,
    pub permutations: usize,
    /// `(1 + #{permuted ≥ observed}) / (1 + permutations)`.
    pub p_value: f64,
    pub sample_size: usize,
}

/// Same estimator as `mmd_squared`, read off a precomputed Gram matrix.
fn statistic(gram: &Array2<f64>, p: &[usize], q: &[usize]) -> f64 {
    let (m, n) = (p.len() as f64, q.len() as f64);
    let block = |a: &[usize], b: &[usize]| -> (f64, f64) {
        let mut total = 0.0;
        let mut diag = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                let v = gram[[ai, bj]];
                total += v;
                if i == j {
                    diag += v;
                }
            }
        }
        (total, diag)
    };
    let (pp, pp_diag) = block(p, p);
    let (qq, qq_diag) = block(q, q);
    let (pq, pq_diag) = block(p, q);
    if p.len() == q.len() {
        (pp - pp_diag + qq - qq_diag - 2.0 * (pq - pq_diag)) / (m * (m - 1.0))
    } else {
        (pp - pp_diag) / (m * (m - 1.0)) + (qq - qq_diag) / (n * (n - 1.0)) - 2.0 * pq / (m * n)
    }
}

/// Unbiased MMD² between `p` and `q` with a permutation p-value.
pub fn permutation_test(
    kernel: &KernelSpec,
    p: &[JointSequence],
    q: &[JointSequence],
    permutations: usize,
    seed: u64,
) -> Result<MmdTestResult> {
    if p.len() < 2 || q.len() < 2 {
        return Err(Error::Config("each sample needs at least two elements".into()));
    }
    let pooled: Vec<JointSequence> = p.iter().chain(q).cloned().collect();
    let gram = gram_matrix(kernel, &pooled, &pooled)?;
    let idx: Vec<usize> = (0..pooled.len()).collect();
    let observed = statistic(&gram, &idx[..p.len()], &idx[p.len()..]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = idx.clone();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if statistic(&gram, &shuffled[..p.len()], &shuffled[p.len()..]) >= observed {
            exceed += 1;
        }
    }
    Ok(MmdTestResult {
        mmd2: observed,
        sigma: kernel.sigma,
        permutations,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        sample_size: p.len(),
    })
}

/// Tests real test-split joints against a checkpoint's forecast joints,
/// using at most `max_windows` evenly spaced windows.
pub fn forecast_mmd_test(
    cfg: &ExperimentConfig,
    model: &LinearForecaster,
    max_windows: usize,
    permutations: usize,
) -> Result<MmdTestResult> {
    let dataset = prepare_dataset(cfg)?;
    let stride = dataset.test.len().div_ceil(max_windows.max(2));
    let mut reals = Vec::new();
    let mut forecasts = Vec::new();
    for w in dataset.test.iter().step_by(stride.max(1)) {
        reals.push(JointSequence::concat(w.x.view(), w.y.view())?);
        let pred = model.forward(&w.x)?;
        forecasts.push(JointSequence::concat(w.x.view(), pred.view())?);
    }
    let sigma = median_bandwidth(KernelFamily::Exponential, &reals)?;
    permutation_test(&KernelSpec::exponential(sigma), &reals, &forecasts, permutations, cfg.seed)
}
