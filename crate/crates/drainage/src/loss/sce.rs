//! Symmetric cross-entropy: `a·CE + b·RCE`, where the reverse term swaps
//! prediction and label distributions. With a one-hot label the reverse term
//! is `−Σ_i p_i·log(q_i)` with `log 0` clipped to a finite constant A, which
//! collapses to `−A·(1 − p_t)`.

use super::{check_target, Loss, LossGrad};
use crate::numerics::{closed_drainage_probs, LogitVector, ProbVector};
use crate::{Error, Result};

const DEFAULT_LOG_CLIP: f64 = -4.0;

pub fn sce_loss(p: &ProbVector, target: usize, a: f64, b: f64) -> Result<f64> {
    sce_loss_clipped(p, target, a, b, DEFAULT_LOG_CLIP)
}

pub fn sce_loss_clipped(p: &ProbVector, target: usize, a: f64, b: f64, log_clip: f64) -> Result<f64> {
    if a < 0.0 || b < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sce weights must be non-negative, got a = {a}, b = {b}"
        )));
    }
    if target >= p.len() {
        return Err(Error::IndexOutOfRange(format!(
            "target class {target} out of range for {} classes",
            p.len()
        )));
    }
    let p_t = p.get(target);
    let forward = if a == 0.0 { 0.0 } else { a * -p_t.ln() };
    let reverse = b * -log_clip * (1.0 - p_t);
    Ok(forward + reverse)
}

#[derive(Debug, Clone, Copy)]
pub struct SceLoss {
    a: f64,
    b: f64,
    log_clip: f64,
}

impl SceLoss {
    pub fn new(a: f64, b: f64, log_clip: f64) -> Result<Self> {
        if a < 0.0 || b < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sce weights must be non-negative, got a = {a}, b = {b}"
            )));
        }
        if !(log_clip.is_finite() && log_clip < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sce log clip must be a finite negative value, got {log_clip}"
            )));
        }
        Ok(SceLoss { a, b, log_clip })
    }
}

impl Loss for SceLoss {
    fn name(&self) -> &'static str {
        "sce"
    }

    fn value(&self, z: &LogitVector, target: usize) -> Result<f64> {
        check_target(z, target)?;
        sce_loss_clipped(&closed_drainage_probs(z), target, self.a, self.b, self.log_clip)
    }

    /// (a + b·(−A)·p_t) · (p_i − δ_it) through the closed softmax; zero for
    /// the drainage slot.
    fn grad(&self, z: &LogitVector, target: usize) -> Result<LossGrad> {
        check_target(z, target)?;
        let probs = closed_drainage_probs(z);
        let c = z.num_classes();
        let scale = self.a + self.b * -self.log_clip * probs.get(target);
        let mut d_z = vec![0.0; c + 1];
        for i in 0..c {
            d_z[i] = scale * probs.get(i);
        }
        d_z[target] -= scale;
        Ok(LossGrad::new(d_z))
    }
}
