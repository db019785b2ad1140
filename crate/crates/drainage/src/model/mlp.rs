//! Multilayer perceptron: affine layers with rectifiers between them.

use super::layers::{
    affine_backward_input, affine_backward_params, affine_forward, relu_backward, relu_forward,
};
use super::{
    assemble_logits, check_batch, glorot_uniform, DrainageHead, ForwardCache, MlpSpec, Model,
    ModelSpec, ParamKind, ParameterSet, Tensor,
};
use crate::loss::LossGrad;
use crate::mat::Matrix;
use crate::numerics::LogitVector;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Mlp {
    spec: MlpSpec,
    // Layer widths including input and output.
    widths: Vec<usize>,
    params: ParameterSet,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::InvalidParameter("mlp input_dim must be > 0".into()));
        }
        if spec.num_classes < 2 {
            return Err(Error::InvalidParameter(
                "mlp needs at least 2 classes".into(),
            ));
        }
        if spec.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParameter(
                "mlp hidden widths must be > 0".into(),
            ));
        }
        let mut widths = vec![spec.input_dim];
        widths.extend_from_slice(&spec.hidden);
        widths.push(spec.drainage.output_width(spec.num_classes));

        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut tensors = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            tensors.push(Tensor {
                name: format!("w{l}"),
                kind: ParamKind::Weight,
                shape: vec![fan_out, fan_in],
                data: glorot_uniform(&mut rng, fan_in, fan_out, fan_in * fan_out),
            });
            tensors.push(Tensor::zeros(&format!("b{l}"), ParamKind::Bias, vec![fan_out]));
        }
        Ok(Mlp {
            spec,
            widths,
            params: ParameterSet { tensors },
        })
    }

    fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        (
            &self.params.tensors[2 * l].data,
            &self.params.tensors[2 * l + 1].data,
        )
    }

    /// Runs the stack for one sample; `hidden_sink` collects post-rectifier
    /// activations when caching.
    fn run(&self, x: &[f64], mut hidden_sink: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut out = vec![0.0; self.widths[l + 1]];
            affine_forward(&a, w, b, &mut out);
            if l < self.num_layers() - 1 {
                relu_forward(&mut out);
                if let Some(sink) = hidden_sink.as_deref_mut() {
                    sink[l].extend_from_slice(&out);
                }
            }
            a = out;
        }
        a
    }
}

impl Model for Mlp {
    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Mlp(self.spec.clone())
    }

    fn input_dim(&self) -> usize {
        self.spec.input_dim
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
        check_batch(batch, self.spec.input_dim)?;
        (0..batch.rows())
            .map(|i| assemble_logits(&self.run(batch.row(i), None), self.spec.drainage))
            .collect()
    }

    fn forward_cached(&self, batch: &Matrix) -> Result<(Vec<LogitVector>, ForwardCache)> {
        check_batch(batch, self.spec.input_dim)?;
        let n_hidden = self.num_layers() - 1;
        let mut stages: Vec<Vec<f64>> = (0..n_hidden)
            .map(|l| Vec::with_capacity(batch.rows() * self.widths[l + 1]))
            .collect();
        let mut logits = Vec::with_capacity(batch.rows());
        for i in 0..batch.rows() {
            let raw = self.run(batch.row(i), Some(&mut stages));
            logits.push(assemble_logits(&raw, self.spec.drainage)?);
        }
        Ok((logits, ForwardCache::new(batch.rows(), stages)))
    }

    fn backward(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        loss_grads: &[LossGrad],
    ) -> Result<ParameterSet> {
        check_batch(batch, self.spec.input_dim)?;
        cache.check(batch, self.num_layers() - 1)?;
        if loss_grads.len() != batch.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} loss gradients for {} samples",
                loss_grads.len(),
                batch.rows()
            )));
        }

        let n = batch.rows();
        let last = self.num_layers() - 1;
        let out_width = self.widths[last + 1];
        let mut grads = self.params.zeros_like();

        for (i, g) in loss_grads.iter().enumerate() {
            // Output-layer gradient; the constant drainage slot, when
            // present, simply has no row to receive it.
            let mut dy: Vec<f64> = g.as_slice()[..out_width].to_vec();
            for l in (0..self.num_layers()).rev() {
                let a_in: &[f64] = if l == 0 {
                    batch.row(i)
                } else {
                    let width = self.widths[l];
                    &cache.stage(l - 1)[i * width..(i + 1) * width]
                };
                let (w, _) = self.layer(l);
                {
                    let (dw_t, db_t) = {
                        let (left, right) = grads.tensors.split_at_mut(2 * l + 1);
                        (&mut left[2 * l], &mut right[0])
                    };
                    affine_backward_params(a_in, &dy, &mut dw_t.data, &mut db_t.data);
                }
                if l > 0 {
                    let mut dx = vec![0.0; self.widths[l]];
                    affine_backward_input(w, &dy, &mut dx);
                    relu_backward(a_in, &mut dx);
                    dy = dx;
                }
            }
        }
        grads.scale(1.0 / n as f64);
        Ok(grads)
    }
}
