//! The drainage loss.
//!
//! Probability form:
//!
//! ```text
//! l(p, t) = log(1 + α·(p_d/p_t + p_J/p_t) + β·p_J/p_d)
//! ```
//!
//! Logit form: a log-sum-exp over 2C pooled soft-constraint terms,
//!
//! ```text
//! l(z, t) = LSE{ 0,
//!                z_d − z_t + log α,
//!                (z_j − z_t + log α) for j ≠ t,
//!                (z_j − z_d + log β) for j ≠ t }
//! ```
//!
//! Both forms agree wherever the open-drainage probabilities are all
//! positive; training always uses the logit form, which stays finite at the
//! probability form's removable singularities (p_t = 0 or p_d = 0).

use super::{check_target, Loss, LossGrad};
use crate::numerics::{log_sum_exp, LogitVector};
use crate::{Error, Result};

/// Drainage-loss hyperparameters α, β > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrainageParams {
    alpha: f64,
    beta: f64,
}

impl DrainageParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and > 0, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and > 0, got {beta}"
            )));
        }
        Ok(DrainageParams { alpha, beta })
    }

    /// The β = 1/α convention.
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0 / alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// The (p_t, p_d, p_J) simplex decomposition the probability form operates
/// on: target-class probability, drainage probability, and the summed
/// non-target class probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbAllocation {
    pub p_t: f64,
    pub p_d: f64,
    pub p_j: f64,
}

impl ProbAllocation {
    pub fn new(p_t: f64, p_d: f64, p_j: f64) -> Result<Self> {
        for (name, v) in [("p_t", p_t), ("p_d", p_d), ("p_J", p_j)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        let sum = p_t + p_d + p_j;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "allocation sums to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(ProbAllocation { p_t, p_d, p_j })
    }

    /// Reads the allocation off an open-drainage probability vector for a
    /// given target class.
    pub fn from_open_probs(probs: &crate::numerics::ProbVector, target: usize) -> Result<Self> {
        let entries = probs.as_slice();
        let c = entries.len() - 1;
        if target >= c {
            return Err(Error::IndexOutOfRange(format!(
                "target class {target} out of range for {c} classes"
            )));
        }
        let p_t = entries[target];
        let p_d = entries[c];
        let p_j: f64 = entries[..c]
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(_, p)| p)
            .sum();
        Ok(ProbAllocation { p_t, p_d, p_j })
    }
}

/// Probability form of the drainage loss. Errors when p_t = 0 or p_d = 0;
/// boundary cases belong to the logit form.
pub fn drainage_loss_prob(p: &ProbAllocation, params: &DrainageParams) -> Result<f64> {
    if p.p_t <= 0.0 || p.p_d <= 0.0 {
        return Err(Error::Domain(format!(
            "probability form needs p_t > 0 and p_d > 0 (got p_t = {}, p_d = {}); \
             use the logit form for boundary cases",
            p.p_t, p.p_d
        )));
    }
    let ratio = params.alpha * (p.p_d / p.p_t + p.p_j / p.p_t) + params.beta * p.p_j / p.p_d;
    Ok(ratio.ln_1p())
}

fn pooled_terms(z: &LogitVector, target: usize, params: &DrainageParams) -> Vec<f64> {
    let c = z.num_classes();
    let z_t = z.class(target);
    let z_d = z.drainage();
    let log_alpha = params.alpha.ln();
    let log_beta = params.beta.ln();

    let mut terms = Vec::with_capacity(2 * c);
    terms.push(0.0);
    terms.push(z_d - z_t + log_alpha);
    for j in 0..c {
        if j != target {
            terms.push(z.class(j) - z_t + log_alpha);
        }
    }
    for j in 0..c {
        if j != target {
            terms.push(z.class(j) - z_d + log_beta);
        }
    }
    terms
}

/// Logit form of the drainage loss: LSE over the 2C pooled terms. Finite for
/// all finite logits.
pub fn drainage_loss_logit(z: &LogitVector, target: usize, params: &DrainageParams) -> Result<f64> {
    check_target(z, target)?;
    log_sum_exp(&pooled_terms(z, target, params))
}

/// Exact gradient of the logit form: the LSE gradient is a softmax over the
/// pooled terms, and each term is linear in the logits.
pub fn drainage_loss_grad(
    z: &LogitVector,
    target: usize,
    params: &DrainageParams,
) -> Result<LossGrad> {
    check_target(z, target)?;
    let c = z.num_classes();
    let terms = pooled_terms(z, target, params);
    let lse = log_sum_exp(&terms)?;

    // Softmax weights over the pool; terms are laid out as
    // [0, drainage-vs-target, (non-target-vs-target)_j, (non-target-vs-drainage)_j].
    let w = |i: usize| (terms[i] - lse).exp();

    let mut d_z = vec![0.0; c + 1];
    let w_d = w(1);
    d_z[target] -= w_d;
    d_z[c] += w_d;

    let mut idx = 2;
    for j in 0..c {
        if j != target {
            let w1 = w(idx);
            d_z[j] += w1;
            d_z[target] -= w1;
            idx += 1;
        }
    }
    for j in 0..c {
        if j != target {
            let w2 = w(idx);
            d_z[j] += w2;
            d_z[c] -= w2;
            idx += 1;
        }
    }
    Ok(LossGrad::new(d_z))
}

/// The drainage loss as a registered training strategy (logit form).
#[derive(Debug, Clone)]
pub struct DrainageLoss {
    params: DrainageParams,
}

impl DrainageLoss {
    pub fn new(params: DrainageParams) -> Self {
        DrainageLoss { params }
    }

    pub fn params(&self) -> &DrainageParams {
        &self.params
    }
}

impl Loss for DrainageLoss {
    fn name(&self) -> &'static str {
        "drainage"
    }

    fn value(&self, z: &LogitVector, target: usize) -> Result<f64> {
        drainage_loss_logit(z, target, &self.params)
    }

    fn grad(&self, z: &LogitVector, target: usize) -> Result<LossGrad> {
        drainage_loss_grad(z, target, &self.params)
    }
}
