//! Single-threaded timing of the balancing objective.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balancing::{kmb_df_backward, kmb_df_loss, BalanceConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

pub const DEFAULT_HORIZONS: [usize; 5] = [32, 96, 192, 336, 720];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub batch: usize,
    pub history: usize,
    pub channels: usize,
    pub top_k: usize,
    pub reps: usize,
    pub seed: u64,
    pub horizons: Vec<usize>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            batch: 128,
            history: 96,
            channels: 21,
            top_k: 3,
            reps: 100,
            seed: 0,
            horizons: DEFAULT_HORIZONS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub horizon: usize,
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub total_ms: f64,
}

fn random_series(rng: &mut ChaCha8Rng, n: usize, rows: usize, cols: usize) -> Vec<Array2<f64>> {
    (0..n)
        .map(|_| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0)))
        .collect()
}

fn median_ms(mut v: Vec<f64>) -> f64 {
    crate::kernels::median(&mut v)
}

fn probe_one(cfg: &TimingConfig, horizon: usize) -> Result<TimingRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ horizon as u64);
    let h = random_series(&mut rng, cfg.batch, cfg.history, cfg.channels);
    let y = random_series(&mut rng, cfg.batch, horizon, cfg.channels);
    let f = random_series(&mut rng, cfg.batch, horizon, cfg.channels);
    let balance = BalanceConfig::new(0.5, cfg.top_k, 0.001, KernelSpec::exponential(10.0));
    let mut fwd = Vec::with_capacity(cfg.reps);
    let mut bwd = Vec::with_capacity(cfg.reps);
    let mut tot = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let t0 = Instant::now();
        let (_, diag) = kmb_df_loss(&balance, &h, &y, &f)?;
        let t1 = Instant::now();
        let grads = kmb_df_backward(&balance, &h, &y, &f, &diag)?;
        let t2 = Instant::now();
        std::hint::black_box(grads);
        fwd.push((t1 - t0).as_secs_f64() * 1e3);
        bwd.push((t2 - t1).as_secs_f64() * 1e3);
        tot.push((t2 - t0).as_secs_f64() * 1e3);
    }
    Ok(TimingRow {
        horizon,
        forward_ms: median_ms(fwd),
        backward_ms: median_ms(bwd),
        total_ms: median_ms(tot),
    })
}

/// Median per-batch forward and backward times for each horizon, measured
/// on one thread.
pub fn timing_probe(cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    if cfg.reps == 0 || cfg.batch < cfg.top_k || cfg.horizons.is_empty() || cfg.history == 0 || cfg.channels == 0 {
        return Err(Error::Config(format!("invalid timing config {cfg:?}")));
    }
    if cfg.horizons.contains(&0) {
        return Err(Error::Config("horizons must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| cfg.horizons.iter().map(|&t| probe_one(cfg, t)).collect())
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("horizon,forward_ms,backward_ms,total_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.horizon, r.forward_ms, r.backward_ms, r.total_ms));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_probe() {
        let cfg = TimingConfig {
            batch: 8,
            history: 4,
            channels: 2,
            reps: 3,
            horizons: vec![2, 8],
            ..TimingConfig::default()
        };
        let rows = timing_probe(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.forward_ms >= 0.0 && r.backward_ms >= 0.0));
        assert_eq!(timing_csv(&rows).lines().count(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = TimingConfig {
            reps: 0,
            ..TimingConfig::default()
        };
        assert!(timing_probe(&bad).is_err());
        let bad = TimingConfig {
            horizons: vec![0],
            ..TimingConfig::default()
        };
        assert!(timing_probe(&bad).is_err());
    }
}
