//! Experiment harness: configuration, training with early stopping,
//! evaluation, sweeps and timing.

pub mod config;
pub mod mmd;
pub mod sweep;
pub mod timing;
pub mod train;

pub use config::{apply_override, Bandwidth, BandwidthRule, DataConfig, ExperimentConfig, KernelConfig, ObjectiveConfig, ObjectiveName};
pub use mmd::{forecast_mmd_test, permutation_test, MmdTestResult};
pub use sweep::{run_sweep, SweepGrid, SweepResult, SweepRow};
pub use timing::{timing_probe, TimingConfig, TimingRow};
pub use train::{evaluate, evaluate_checkpoint, train, train_on, write_run, EarlyStopping, EvalMetrics, EvalReport, TrainReport, TrainRun};
