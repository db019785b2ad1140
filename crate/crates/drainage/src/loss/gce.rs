//! Generalized cross-entropy: `(1 − p_t^q) / q` with q ∈ (0, 1], a
//! Box-Cox bridge between cross-entropy (q → 0) and MAE (q = 1).

use super::{check_target, Loss, LossGrad};
use crate::numerics::{closed_drainage_probs, LogitVector, ProbVector};
use crate::{Error, Result};

pub fn gce_loss(p: &ProbVector, target: usize, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gce exponent q must lie in (0, 1], got {q}"
        )));
    }
    if target >= p.len() {
        return Err(Error::IndexOutOfRange(format!(
            "target class {target} out of range for {} classes",
            p.len()
        )));
    }
    Ok((1.0 - p.get(target).powf(q)) / q)
}

#[derive(Debug, Clone, Copy)]
pub struct GceLoss {
    q: f64,
}

impl GceLoss {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gce exponent q must lie in (0, 1], got {q}"
            )));
        }
        Ok(GceLoss { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

impl Loss for GceLoss {
    fn name(&self) -> &'static str {
        "gce"
    }

    fn value(&self, z: &LogitVector, target: usize) -> Result<f64> {
        check_target(z, target)?;
        gce_loss(&closed_drainage_probs(z), target, self.q)
    }

    /// d/dz_i of (1 − p_t^q)/q through the closed softmax:
    /// p_t^q · (p_i − δ_it); zero for the drainage slot.
    fn grad(&self, z: &LogitVector, target: usize) -> Result<LossGrad> {
        check_target(z, target)?;
        let probs = closed_drainage_probs(z);
        let c = z.num_classes();
        let scale = probs.get(target).powf(self.q);
        let mut d_z = vec![0.0; c + 1];
        for i in 0..c {
            d_z[i] = scale * probs.get(i);
        }
        d_z[target] -= scale;
        Ok(LossGrad::new(d_z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(entries: Vec<f64>) -> ProbVector {
        ProbVector::new(entries).unwrap()
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        for q in [0.1, 0.5, 0.7, 1.0] {
            assert_eq!(gce_loss(&probs(vec![1.0, 0.0]), 0, q).unwrap(), 0.0);
        }
    }

    #[test]
    fn q_one_is_mae_like() {
        assert!((gce_loss(&probs(vec![0.5, 0.5]), 0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn paper_setting_direct_evaluation() {
        let l = gce_loss(&probs(vec![0.5, 0.5]), 0, 0.7).unwrap();
        assert!((l - 0.5491825618964884).abs() < 1e-12);
    }

    #[test]
    fn decreasing_in_target_probability() {
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p_t = k as f64 / 20.0;
            let l = gce_loss(&probs(vec![p_t, 1.0 - p_t]), 0, 0.7).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn q_out_of_range_rejected() {
        assert!(gce_loss(&probs(vec![0.5, 0.5]), 0, 0.0).is_err());
        assert!(gce_loss(&probs(vec![0.5, 0.5]), 0, 1.5).is_err());
        assert!(GceLoss::new(-0.2).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let loss = GceLoss::new(0.7).unwrap();
        let logits = [1.2, -0.4, 0.3];
        let z = LogitVector::new(&logits, 0.5).unwrap();
        let g = loss.grad(&z, 1).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = logits;
            let mut minus = logits;
            plus[i] += h;
            minus[i] -= h;
            let lp = loss.value(&LogitVector::new(&plus, 0.5).unwrap(), 1).unwrap();
            let lm = loss.value(&LogitVector::new(&minus, 0.5).unwrap(), 1).unwrap();
            assert!((g.as_slice()[i] - (lp - lm) / (2.0 * h)).abs() < 1e-8);
        }
        assert_eq!(g.d_drainage(), 0.0);
    }
}
