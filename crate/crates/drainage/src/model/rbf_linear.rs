//! Linear classifier over a fixed radial-basis expansion of 2D inputs:
//! z = W·Φ(x), no bias. The weight matrix starts at zero, so the training
//! objective is convex under any convex loss.

use super::{
    assemble_logits, check_batch, DrainageHead, ForwardCache, Model, ModelSpec, ParamKind,
    ParameterSet, RbfLinearSpec, Tensor,
};
use crate::data::{rbf_expand, RbfExpansion};
use crate::loss::LossGrad;
use crate::mat::Matrix;
use crate::numerics::LogitVector;
use crate::Result;

pub struct RbfLinear {
    spec: RbfLinearSpec,
    expansion: RbfExpansion,
    params: ParameterSet,
}

impl RbfLinear {
    pub fn new(spec: RbfLinearSpec) -> Result<Self> {
        let expansion = RbfExpansion::grid(spec.grid, spec.span, spec.gamma)?;
        let out_width = spec.drainage.output_width(spec.num_classes);
        let params = ParameterSet {
            tensors: vec![Tensor::zeros(
                "w",
                ParamKind::Weight,
                vec![out_width, expansion.num_centers()],
            )],
        };
        Ok(RbfLinear {
            spec,
            expansion,
            params,
        })
    }

    pub fn expansion(&self) -> &RbfExpansion {
        &self.expansion
    }

    fn out_width(&self) -> usize {
        self.spec.drainage.output_width(self.spec.num_classes)
    }

    fn logits_for(&self, phi: &[f64]) -> Result<LogitVector> {
        let w = &self.params.tensors[0].data;
        let centers = self.expansion.num_centers();
        let mut raw = vec![0.0; self.out_width()];
        for (o, slot) in raw.iter_mut().enumerate() {
            let row = &w[o * centers..(o + 1) * centers];
            *slot = row.iter().zip(phi).map(|(a, b)| a * b).sum();
        }
        assemble_logits(&raw, self.spec.drainage)
    }
}

impl Model for RbfLinear {
    fn kind(&self) -> &'static str {
        "rbf_linear"
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::RbfLinear(self.spec.clone())
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn drainage_head(&self) -> DrainageHead {
        self.spec.drainage
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn forward_batch(&self, batch: &Matrix) -> Result<Vec<LogitVector>> {
        check_batch(batch, 2)?;
        (0..batch.rows())
            .map(|i| self.logits_for(&rbf_expand(batch.row(i), &self.expansion)))
            .collect()
    }

    fn forward_cached(&self, batch: &Matrix) -> Result<(Vec<LogitVector>, ForwardCache)> {
        check_batch(batch, 2)?;
        let centers = self.expansion.num_centers();
        let mut phis = vec![0.0; batch.rows() * centers];
        let mut logits = Vec::with_capacity(batch.rows());
        for i in 0..batch.rows() {
            let phi = rbf_expand(batch.row(i), &self.expansion);
            logits.push(self.logits_for(&phi)?);
            phis[i * centers..(i + 1) * centers].copy_from_slice(&phi);
        }
        Ok((logits, ForwardCache::new(batch.rows(), vec![phis])))
    }

    fn backward(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        loss_grads: &[LossGrad],
    ) -> Result<ParameterSet> {
        check_batch(batch, 2)?;
        cache.check(batch, 1)?;
        let n = batch.rows();
        let centers = self.expansion.num_centers();
        let out_width = self.out_width();
        let phis = cache.stage(0);

        let mut grads = self.params.zeros_like();
        let dw = &mut grads.tensors[0].data;
        let scale = 1.0 / n as f64;
        for (i, g) in loss_grads.iter().enumerate() {
            let phi = &phis[i * centers..(i + 1) * centers];
            // In constant-drainage mode the drainage slot of the loss
            // gradient has no parameter to flow into.
            for o in 0..out_width {
                let go = g.as_slice()[o] * scale;
                if go == 0.0 {
                    continue;
                }
                let row = &mut dw[o * centers..(o + 1) * centers];
                for (w, p) in row.iter_mut().zip(phi) {
                    *w += go * p;
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::open_drainage_probs;

    fn spec() -> RbfLinearSpec {
        RbfLinearSpec {
            num_classes: 3,
            grid: 4,
            span: 5.0,
            gamma: 0.25,
            drainage: DrainageHead::Learned,
            init_seed: 0,
        }
    }

    #[test]
    fn zero_weights_give_uniform_open_probs() {
        let model = RbfLinear::new(spec()).unwrap();
        let z = model.forward_one(&[1.0, -2.0]).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        let p = open_drainage_probs(&z);
        for i in 0..4 {
            assert!((p.get(i) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_head_injects_exact_value() {
        let mut s = spec();
        s.drainage = DrainageHead::Constant(2.0);
        let model = RbfLinear::new(s).unwrap();
        let z = model.forward_one(&[0.3, 0.4]).unwrap();
        assert_eq!(z.drainage(), 2.0);
        assert_eq!(z.num_classes(), 3);
    }

    #[test]
    fn single_sample_matches_batched_row() {
        let mut model = RbfLinear::new(spec()).unwrap();
        for (i, v) in model.params_mut().tensors[0].data.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 * 0.1 - 0.5;
        }
        let batch =
            Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 2.0], vec![-3.0, 0.1]]).unwrap();
        let batched = model.forward_batch(&batch).unwrap();
        for i in 0..3 {
            let single = model.forward_one(batch.row(i)).unwrap();
            for (a, b) in single.as_slice().iter().zip(batched[i].as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_loss_grads_give_zero_param_grads() {
        let model = RbfLinear::new(spec()).unwrap();
        let batch = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (_, cache) = model.forward_cached(&batch).unwrap();
        let grads = model
            .backward(&batch, &cache, &[LossGrad::new(vec![0.0; 4])])
            .unwrap();
        assert!(grads.tensors[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let model = RbfLinear::new(spec()).unwrap();
        let one = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let two = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let (_, cache) = model.forward_cached(&one).unwrap();
        let grads = vec![LossGrad::new(vec![0.0; 4]); 2];
        assert!(matches!(
            model.backward(&two, &cache, &grads),
            Err(crate::Error::StaleCache(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = RbfLinear::new(spec()).unwrap();
        let bad = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(model.forward_batch(&bad).is_err());
    }
}
