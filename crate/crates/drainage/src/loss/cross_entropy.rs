//! Cross-entropy over the class logits, in the same pooled form as the
//! drainage loss: `LSE{0, (z_j − z_t) for j ≠ t} = −log softmax_t(z)`. The
//! drainage logit is ignored.

use super::{check_target, Loss, LossGrad};
use crate::numerics::{closed_drainage_probs, log_sum_exp, LogitVector};
use crate::Result;

pub fn cross_entropy(z: &LogitVector, target: usize) -> Result<f64> {
    check_target(z, target)?;
    let z_t = z.class(target);
    let mut terms = Vec::with_capacity(z.num_classes());
    terms.push(0.0);
    for j in 0..z.num_classes() {
        if j != target {
            terms.push(z.class(j) - z_t);
        }
    }
    log_sum_exp(&terms)
}

/// Softmax-minus-one-hot over the class logits; zero for the drainage slot.
pub fn cross_entropy_grad(z: &LogitVector, target: usize) -> Result<LossGrad> {
    check_target(z, target)?;
    let probs = closed_drainage_probs(z);
    let c = z.num_classes();
    let mut d_z = vec![0.0; c + 1];
    for i in 0..c {
        d_z[i] = probs.get(i);
    }
    d_z[target] -= 1.0;
    Ok(LossGrad::new(d_z))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CrossEntropyLoss;

impl Loss for CrossEntropyLoss {
    fn name(&self) -> &'static str {
        "ce"
    }

    fn value(&self, z: &LogitVector, target: usize) -> Result<f64> {
        cross_entropy(z, target)
    }

    fn grad(&self, z: &LogitVector, target: usize) -> Result<LossGrad> {
        cross_entropy_grad(z, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_prediction_costs_log_c() {
        let z = LogitVector::new(&[0.7, 0.7, 0.7], -2.0).unwrap();
        for t in 0..3 {
            assert!((cross_entropy(&z, t).unwrap() - 1.0986122886681098).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_point_nine_target() {
        // Logits chosen so softmax_t = 0.9 exactly: z = (ln 9, 0), C = 2.
        let z = LogitVector::new(&[9.0_f64.ln(), 0.0], 0.0).unwrap();
        assert!((cross_entropy(&z, 0).unwrap() - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn drainage_logit_never_enters() {
        let a = LogitVector::new(&[1.0, -0.5, 0.2], -100.0).unwrap();
        let b = LogitVector::new(&[1.0, -0.5, 0.2], 100.0).unwrap();
        assert_eq!(cross_entropy(&a, 1).unwrap(), cross_entropy(&b, 1).unwrap());
        let ga = cross_entropy_grad(&a, 1).unwrap();
        assert_eq!(ga.d_drainage(), 0.0);
    }

    #[test]
    fn target_out_of_range() {
        let z = LogitVector::new(&[0.0, 0.0], 0.0).unwrap();
        assert!(cross_entropy(&z, 2).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let h = 1e-5;
        for _ in 0..100 {
            let c = rng.gen_range(2..7);
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let z = LogitVector::new(&logits, 0.0).unwrap();
            let t = rng.gen_range(0..c);
            let g = cross_entropy_grad(&z, t).unwrap();
            for i in 0..c {
                let mut plus = logits.clone();
                let mut minus = logits.clone();
                plus[i] += h;
                minus[i] -= h;
                let lp = cross_entropy(&LogitVector::new(&plus, 0.0).unwrap(), t).unwrap();
                let lm = cross_entropy(&LogitVector::new(&minus, 0.0).unwrap(), t).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                assert!((g.as_slice()[i] - numeric).abs() < 1e-8);
            }
        }
    }
}
