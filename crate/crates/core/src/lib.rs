//! Training toolkit for direct multi-step forecasting with a kernelized
//! moment-balancing objective.
//!
//! The balancing objective compares the joint distribution of
//! `(history, label)` with that of `(history, forecast)` through kernel
//! balancing functions anchored at batch samples, penalizes the `K` most
//! imbalanced anchors through a soft-margin hinge, and mixes that penalty
//! with the usual squared error.
//!
//! Modules, bottom-up:
//!
//! - [`kernels`]: kernel families, Gram matrices, analytic kernel gradients
//! - [`balancing`]: informativeness scores, top-K selection, hinge slack,
//!   the composite loss and its gradient, MMD estimates
//! - [`objectives`]: MSE and frequency-L1 baselines under the same contract
//! - [`models`]: linear direct forecaster and Adam
//! - [`data`]: synthetic series, CSV loading, standardization, windows, splits
//! - [`harness`]: configuration, training with early stopping, sweeps,
//!   timing probes
//! - [`gradcheck`]: finite-difference checks of every analytic gradient

pub mod balancing;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod kernels;
pub mod models;
pub mod objectives;

pub use balancing::{
    hinge_slack, informativeness_scores, kmb_df_grad, kmb_df_loss, mmd_squared, select_top_k,
    AnchorMode, BalanceConfig, BalanceDiagnostics, HingeMode, MmdEstimate,
};
pub use data::{SeriesMatrix, SplitSpec, SyntheticKind, SyntheticSpec, WindowPair};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, TrainReport};
pub use kernels::{eval_kernel, gram_matrix, kernel_grad_b, JointSequence, KernelFamily, KernelSpec};
pub use models::{AdamState, LinearForecaster};
pub use objectives::ObjectiveKind;
