//! Loss functions over drainage logits, behind a common [`Loss`] trait.
//!
//! Every variant is registered by name and built from a [`LossSpec`], so the
//! training engine and CLI select the loss at runtime:
//!
//! - `drainage` — the drainage loss (logit form for training, probability
//!   form for verification), [`DrainageLoss`].
//! - `ce` — cross-entropy over the class logits, [`CrossEntropyLoss`].
//! - `gce` — generalized cross-entropy, [`GceLoss`].
//! - `sce` — symmetric cross-entropy, [`SceLoss`].
//!
//! All gradients are with respect to the full `(C + 1)`-logit vector; the
//! baselines ignore the drainage logit and leave its slot at zero.

mod cross_entropy;
mod drainage;
mod gce;
mod sce;

pub use cross_entropy::{cross_entropy, cross_entropy_grad, CrossEntropyLoss};
pub use drainage::{
    drainage_loss_grad, drainage_loss_logit, drainage_loss_prob, DrainageLoss, DrainageParams,
    ProbAllocation,
};
pub use gce::{gce_loss, GceLoss};
pub use sce::{sce_loss, SceLoss};

use crate::numerics::LogitVector;
use crate::{Error, Result};

/// Gradient of a scalar loss with respect to the `(C + 1)` logits, drainage
/// slot last. Entries sum to zero for losses that depend on the logits only
/// through softmax-like differences.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    d_z: Vec<f64>,
}

impl LossGrad {
    pub fn new(d_z: Vec<f64>) -> Self {
        LossGrad { d_z }
    }

    /// One entry per class logit plus the drainage slot at the end.
    pub fn as_slice(&self) -> &[f64] {
        &self.d_z
    }

    pub fn d_class(&self, i: usize) -> f64 {
        self.d_z[i]
    }

    pub fn d_drainage(&self) -> f64 {
        self.d_z[self.d_z.len() - 1]
    }
}

/// A per-sample classification loss over a [`LogitVector`].
pub trait Loss: Send + Sync {
    fn name(&self) -> &'static str;

    /// Loss value for a sample labeled `target`.
    fn value(&self, z: &LogitVector, target: usize) -> Result<f64>;

    /// Gradient with respect to all `C + 1` logits.
    fn grad(&self, z: &LogitVector, target: usize) -> Result<LossGrad>;
}

/// Parameters for building any registered loss; unused fields are ignored by
/// variants that do not consume them.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub kind: String,
    /// Drainage α (target-dominance weight).
    pub alpha: f64,
    /// Drainage β; `None` applies the β = 1/α convention.
    pub beta: Option<f64>,
    /// GCE exponent q ∈ (0, 1].
    pub q: f64,
    /// SCE cross-entropy weight.
    pub a: f64,
    /// SCE reverse-term weight.
    pub b: f64,
    /// SCE clip value for log 0.
    pub log_clip: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: "drainage".into(),
            alpha: 1.0,
            beta: None,
            q: 0.7,
            a: 0.1,
            b: 1.0,
            log_clip: -4.0,
        }
    }
}

type LossBuilder = fn(&LossSpec) -> Result<Box<dyn Loss>>;

const REGISTRY: &[(&str, LossBuilder)] = &[
    ("drainage", |s| {
        let params = match s.beta {
            Some(beta) => DrainageParams::new(s.alpha, beta)?,
            None => DrainageParams::with_alpha(s.alpha)?,
        };
        Ok(Box::new(DrainageLoss::new(params)))
    }),
    ("ce", |_| Ok(Box::new(CrossEntropyLoss))),
    ("gce", |s| Ok(Box::new(GceLoss::new(s.q)?))),
    ("sce", |s| Ok(Box::new(SceLoss::new(s.a, s.b, s.log_clip)?))),
];

/// Names of all registered losses.
pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

/// Builds the loss named by `spec.kind`.
pub fn build(spec: &LossSpec) -> Result<Box<dyn Loss>> {
    REGISTRY
        .iter()
        .find(|(n, _)| *n == spec.kind)
        .map(|(_, b)| b(spec))
        .unwrap_or_else(|| {
            Err(Error::Config(format!(
                "unknown loss '{}'; available: {}",
                spec.kind,
                names().join(", ")
            )))
        })
}

pub(crate) fn check_target(z: &LogitVector, target: usize) -> Result<()> {
    if target >= z.num_classes() {
        return Err(Error::IndexOutOfRange(format!(
            "target class {target} out of range for {} classes",
            z.num_classes()
        )));
    }
    Ok(())
}
