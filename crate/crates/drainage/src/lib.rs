//! Classification with a drainage node: an extra output logit that absorbs
//! probability mass for ambiguous, mislabeled, or out-of-distribution samples.
//!
//! The crate provides:
//!
//! - [`numerics`] — stable log-sum-exp and the open/closed softmax over the
//!   `C + 1` output neurons (`C` classes plus the drainage node).
//! - [`loss`] — the drainage loss in probability and logit form with analytic
//!   gradients, plus the CE/GCE/SCE baselines, all behind the [`loss::Loss`]
//!   trait and selectable by name.
//! - [`data`] — the 2D ring toy, synthetic blobs, MNIST IDX ingestion, label
//!   noise injection, class masking, and deterministic splits.
//! - [`model`] — RBF-linear, MLP, and 3-conv CNN predictors behind the
//!   [`model::Model`] trait, with layer-wise backpropagation and a learned or
//!   constant drainage head.
//! - [`optim`] — SGD with momentum, cosine decay, L1/L2 regularization, and
//!   global gradient-norm clipping.
//! - [`eval`] — open/closed prediction, confusion matrices, drainage-response
//!   ranking, and open-set-recognition scoring with ROC AUC.
//! - [`check`] — the executable property suite (monotonicity, convexity, form
//!   equivalence, CE limit, gradient checks).
//! - [`config`] / [`experiment`] — flat key-value experiment configs, shipped
//!   presets, and the end-to-end experiment drivers used by the CLI.

pub mod check;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod mat;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod svg;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("ingest error in {path} at byte {offset}: {message}")]
    Ingest {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
