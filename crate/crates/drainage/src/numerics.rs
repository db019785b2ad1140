//! Numerically stable primitives shared by every loss and probability
//! computation.
//!
//! The model's raw output is a [`LogitVector`]: `C` class logits plus one
//! drainage logit. Internally the drainage logit is stored at index `C` of a
//! `(C + 1)`-vector so that ranking and confusion-matrix code can treat
//! drainage as "class `C`".

use crate::{Error, Result};

/// `C` class logits plus one drainage logit, stored contiguously with the
/// drainage logit last.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Builds from class logits and a drainage logit. Requires `C >= 2` and
    /// all entries finite.
    pub fn new(class_logits: &[f64], drainage_logit: f64) -> Result<Self> {
        let mut values = Vec::with_capacity(class_logits.len() + 1);
        values.extend_from_slice(class_logits);
        values.push(drainage_logit);
        Self::from_raw(values)
    }

    /// Builds from a `(C + 1)`-vector with the drainage logit at the last
    /// position.
    pub fn from_raw(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "logit vector needs at least 2 class logits plus drainage, got {} entries",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "logit vector contains non-finite entry {v}"
            )));
        }
        Ok(LogitVector { values })
    }

    pub fn num_classes(&self) -> usize {
        self.values.len() - 1
    }

    pub fn class(&self, i: usize) -> f64 {
        debug_assert!(i < self.num_classes());
        self.values[i]
    }

    pub fn class_logits(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn drainage(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Full `(C + 1)`-slice, drainage last.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// A probability vector: entries in `[0, 1]` summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter(
                "probability vector must be non-empty".into(),
            ));
        }
        if entries.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(ProbVector { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

/// log Σ exp(v_i), computed with max-subtraction so no intermediate overflows
/// for inputs with magnitude up to 1e300.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !max.is_finite() {
        return Err(Error::InvalidParameter(
            "log_sum_exp requires a non-empty vector of finite reals".into(),
        ));
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax over all `C + 1` output neurons; returns a `(C + 1)`-vector with
/// the drainage probability last.
pub fn open_drainage_probs(z: &LogitVector) -> ProbVector {
    ProbVector {
        entries: softmax(z.as_slice()),
    }
}

/// Softmax restricted to the `C` class logits; the drainage logit is ignored
/// entirely.
pub fn closed_drainage_probs(z: &LogitVector) -> ProbVector {
    ProbVector {
        entries: softmax(z.class_logits()),
    }
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}
