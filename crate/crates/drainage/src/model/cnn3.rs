//! Three-convolutional-layer backbone followed by two fully connected
//! layers: 3×3 same-padded convs, each followed by a rectifier and 2×2
//! max-pool, then flatten → affine → rectifier → affine.

use super::layers::{
    affine_backward_input, affine_backward_params, affine_forward, conv2d_backward,
    conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, ConvShape,
};
use super::{
    assemble_logits, check_batch, glorot_uniform, Cnn3Spec, DrainageHead, ForwardCache, Model,
    ModelSpec, ParamKind, ParameterSet, Tensor,
};
use crate::loss::LossGrad;
use crate::mat::Matrix;
use crate::numerics::LogitVector;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const KERNEL: usize = 3;
// Fixed parallel chunking keeps gradient accumulation order independent of
// the thread schedule.
const CHUNK: usize = 16;

/// Spatial plan of the three conv/pool blocks.
#[derive(Debug, Clone, Copy)]
struct Plan {
    conv: [ConvShape; 3],
    // Height/width after each pool.
    pooled: [(usize, usize); 3],
    flat: usize,
}

impl Plan {
    fn new(spec: &Cnn3Spec) -> Result<Self> {
        let mut h = spec.height;
        let mut w = spec.width;
        let chans = [
            (spec.in_channels, spec.conv_channels[0]),
            (spec.conv_channels[0], spec.conv_channels[1]),
            (spec.conv_channels[1], spec.conv_channels[2]),
        ];
        let mut conv = Vec::with_capacity(3);
        let mut pooled = Vec::with_capacity(3);
        for (in_ch, out_ch) in chans {
            if h < 2 || w < 2 {
                return Err(Error::InvalidParameter(format!(
                    "image {}x{} too small for three 2x2 pools",
                    spec.height, spec.width
                )));
            }
            conv.push(ConvShape {
                in_ch,
                out_ch,
                h,
                w,
                k: KERNEL,
            });
            h /= 2;
            w /= 2;
            pooled.push((h, w));
        }
        Ok(Plan {
            conv: [conv[0], conv[1], conv[2]],
            pooled: [pooled[0], pooled[1], pooled[2]],
            flat: spec.conv_channels[2] * h * w,
        })
    }

    fn pool_out_len(&self, i: usize) -> usize {
        self.conv[i].out_ch * self.pooled[i].0 * self.pooled[i].1
    }
}

// Cache stage indices: per conv block the post-rectifier activation, the
// pool argmax, and the pooled output; then the post-rectifier fc hidden.
const STAGE_COUNT: usize = 10;

struct SampleScratch {
    act: [Vec<f64>; 3],
    arg: [Vec<f64>; 3],
    pool: [Vec<f64>; 3],
    hidden: Vec<f64>,
    raw: Vec<f64>,
}

pub struct Cnn3 {
    spec: Cnn3Spec,
    plan: Plan,
    params: ParameterSet,
}

impl Cnn3 {
    pub fn new(spec: Cnn3Spec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::InvalidParameter(
                "cnn3 needs at least 2 classes".into(),
            ));
        }
        if spec.in_channels == 0 || spec.conv_channels.contains(&0) || spec.fc_hidden == 0 {
            return Err(Error::InvalidParameter(
                "cnn3 channel and hidden widths must be > 0".into(),
            ));
        }
        let plan = Plan::new(&spec)?;
        let out_width = spec.drainage.output_width(spec.num_classes);

        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut tensors = Vec::new();
        for (i, c) in plan.conv.iter().enumerate() {
            let fan_in = c.in_ch * KERNEL * KERNEL;
            let fan_out = c.out_ch * KERNEL * KERNEL;
            tensors.push(Tensor {
                name: format!("conv{i}.w"),
                kind: ParamKind::Weight,
                shape: vec![c.out_ch, c.in_ch, KERNEL, KERNEL],
                data: glorot_uniform(&mut rng, fan_in, fan_out, c.weight_len()),
            });
            tensors.push(Tensor::zeros(
                &format!("conv{i}.b"),
                ParamKind::Bias,
                vec![c.out_ch],
            ));
        }
        tensors.push(Tensor {
            name: "fc0.w".into(),
            kind: ParamKind::Weight,
            shape: vec![spec.fc_hidden, plan.flat],
            data: glorot_uniform(&mut rng, plan.flat, spec.fc_hidden, plan.flat * spec.fc_hidden),
        });
        tensors.push(Tensor::zeros("fc0.b", ParamKind::Bias, vec![spec.fc_hidden]));
        tensors.push(Tensor {
            name: "fc1.w".into(),
            kind: ParamKind::Weight,
            shape: vec![out_width, spec.fc_hidden],
            data: glorot_uniform(
                &mut rng,
                spec.fc_hidden,
                out_width,
                spec.fc_hidden * out_width,
            ),
        });
        tensors.push(Tensor::zeros("fc1.b", ParamKind::Bias, vec![out_width]));

        Ok(Cnn3 {
            spec,
            plan,
            params: ParameterSet { tensors },
        })
    }

    fn out_width(&self) -> usize {
        self.spec.drainage.output_width(self.spec.num_classes)
    }

    fn tensor(&self, i: usize) -> &[f64] {
        &self.params.tensors[i].data
    }

    fn scratch(&self) -> SampleScratch {
        SampleScratch {
            act: [
                vec![0.0; self.plan.conv[0].output_len()],
                vec![0.0; self.plan.conv[1].output_len()],
                vec![0.0; self.plan.conv[2].output_len()],
            ],
            arg: [
                vec![0.0; self.plan.pool_out_len(0)],
                vec![0.0; self.plan.pool_out_len(1)],
                vec![0.0; self.plan.pool_out_len(2)],
            ],
            pool: [
                vec![0.0; self.plan.pool_out_len(0)],
                vec![0.0; self.plan.pool_out_len(1)],
                vec![0.0; self.plan.pool_out_len(2)],
            ],
            hidden: vec![0.0; self.spec.fc_hidden],
            raw: vec![0.0; self.out_width()],
        }
    }

    fn run(&self, x: &[f64], s: &mut SampleScratch) {
        let mut input = x;
        for i in 0..3 {
            let c = &self.plan.conv[i];
            conv2d_forward(input, self.tensor(2 * i), self.tensor(2 * i + 1), c, &mut s.act[i]);
            relu_forward(&mut s.act[i]);
            let (arg_i, pool_i) = {
                let (a, p) = (&mut s.arg[i], &mut s.pool[i]);
                (a, p)
            };
            maxpool2_forward(&s.act[i], c.out_ch, c.h, c.w, pool_i, arg_i);
            input = &s.pool[i];
        }
        affine_forward(&s.pool[2], self.tensor(6), self.tensor(7), &mut s.hidden);
        relu_forward(&mut s.hidden);
        affine_forward(&s.hidden, self.tensor(8), self.tensor(9), &mut s.raw);
    }

    /// Backward for one sample; accumulates unscaled parameter gradients.
    fn backprop_sample(
        &self,
        x: &[f64],
        stages: &CacheView,
        i: usize,
        dy_out: &[f64],
        grads: &mut ParameterSet,
    ) {
        // fc1
        let hidden = stages.slice(9, i);
        {
            let (dw, db) = two_tensors(grads, 8);
            affine_backward_params(hidden, dy_out, dw, db);
        }
        let mut d_hidden = vec![0.0; self.spec.fc_hidden];
        affine_backward_input(self.tensor(8), dy_out, &mut d_hidden);
        relu_backward(hidden, &mut d_hidden);

        // fc0
        let flat = stages.slice(8, i);
        {
            let (dw, db) = two_tensors(grads, 6);
            affine_backward_params(flat, &d_hidden, dw, db);
        }
        let mut d_pool = vec![0.0; self.plan.flat];
        affine_backward_input(self.tensor(6), &d_hidden, &mut d_pool);

        // conv blocks, last to first
        for blk in (0..3).rev() {
            let c = &self.plan.conv[blk];
            let act = stages.slice(3 * blk, i);
            let arg = stages.slice(3 * blk + 1, i);
            let mut d_act = vec![0.0; c.output_len()];
            maxpool2_backward(&d_pool, arg, &mut d_act);
            relu_backward(act, &mut d_act);

            let input: &[f64] = if blk == 0 {
                x
            } else {
                stages.slice(3 * (blk - 1) + 2, i)
            };
            let mut d_input = if blk == 0 {
                None
            } else {
                Some(vec![0.0; c.input_len()])
            };
            {
                let (dw, db) = two_tensors(grads, 2 * blk);
                conv2d_backward(
                    input,
                    self.tensor(2 * blk),
                    &d_act,
                    c,
                    d_input.as_deref_mut(),
                    dw,
                    db,
                );
            }
            if let Some(d) = d_input {
                d_pool = d;
            }
        }
    }
}

/// Borrow two gradient tensors (weight at `i`, bias at `i + 1`) mutably.
fn two_tensors(grads: &mut ParameterSet, i: usize) -> (&mut [f64], &mut [f64]) {
    let (left, right) = grads.tensors.split_at_mut(i + 1);
    (&mut left[i].data, &mut right[0].data)
}

/// Per-stage strides into the flat cache buffers.
struct CacheView<'a> {
    cache: &'a ForwardCache,
    strides: [usize; STAGE_COUNT],
}

impl<'a> CacheView<'a> {
    fn slice(&self, stage: usize, sample: usize) -> &'a [f64] {
        let w = self.strides[stage];
        &self.cache.stage(stage)[sample * w..(sample + 1) * w]
    }
}

impl Model for Cnn3 {
    fn kind(&self) -> &'static str {
        "cnn3"
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Cnn3(self.spec.clone())
    }

    fn input_dim(&self) -> usize {
        self.spec.in_channels * self.spec.height * self.spec.width
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
        check_batch(batch, self.input_dim())?;
        let rows: Vec<usize> = (0..batch.rows()).collect();
        let chunks: Vec<Result<Vec<LogitVector>>> = rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut s = self.scratch();
                chunk
                    .iter()
                    .map(|&i| {
                        self.run(batch.row(i), &mut s);
                        assemble_logits(&s.raw, self.spec.drainage)
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(batch.rows());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    fn forward_cached(&self, batch: &Matrix) -> Result<(Vec<LogitVector>, ForwardCache)> {
        check_batch(batch, self.input_dim())?;
        let n = batch.rows();
        let strides = self.stage_strides();
        let mut stages: Vec<Vec<f64>> =
            strides.iter().map(|w| vec![0.0; w * n]).collect();

        // Fill each sample's slot across all stage buffers in parallel over
        // fixed chunks.
        let mut slots: Vec<Vec<&mut [f64]>> = Vec::with_capacity(STAGE_COUNT);
        for (stage, buf) in stages.iter_mut().enumerate() {
            slots.push(buf.chunks_mut(strides[stage].max(1)).collect());
        }
        // Transpose: per-sample tuple of stage slots.
        let mut per_sample: Vec<Vec<&mut [f64]>> = Vec::with_capacity(n);
        for _ in 0..n {
            per_sample.push(Vec::with_capacity(STAGE_COUNT));
        }
        for stage_slots in slots {
            for (i, slot) in stage_slots.into_iter().enumerate() {
                per_sample[i].push(slot);
            }
        }

        let logits: Vec<Result<LogitVector>> = per_sample
            .par_iter_mut()
            .enumerate()
            .map(|(i, slots)| {
                let mut s = self.scratch();
                self.run(batch.row(i), &mut s);
                for blk in 0..3 {
                    slots[3 * blk].copy_from_slice(&s.act[blk]);
                    slots[3 * blk + 1].copy_from_slice(&s.arg[blk]);
                    slots[3 * blk + 2].copy_from_slice(&s.pool[blk]);
                }
                slots[9].copy_from_slice(&s.hidden);
                assemble_logits(&s.raw, self.spec.drainage)
            })
            .collect();

        let mut out = Vec::with_capacity(n);
        for l in logits {
            out.push(l?);
        }
        Ok((out, ForwardCache::new(n, stages)))
    }

    fn backward(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        loss_grads: &[LossGrad],
    ) -> Result<ParameterSet> {
        check_batch(batch, self.input_dim())?;
        cache.check(batch, STAGE_COUNT)?;
        if loss_grads.len() != batch.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} loss gradients for {} samples",
                loss_grads.len(),
                batch.rows()
            )));
        }

        let view = CacheView {
            cache,
            strides: self.stage_strides(),
        };
        let out_width = self.out_width();
        let rows: Vec<usize> = (0..batch.rows()).collect();
        let partials: Vec<ParameterSet> = rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = self.params.zeros_like();
                for &i in chunk {
                    let dy = &loss_grads[i].as_slice()[..out_width];
                    self.backprop_sample(batch.row(i), &view, i, dy, &mut grads);
                }
                grads
            })
            .collect();

        let mut total = self.params.zeros_like();
        for p in &partials {
            total.add_scaled(p, 1.0);
        }
        total.scale(1.0 / batch.rows() as f64);
        Ok(total)
    }
}

impl Cnn3 {
    fn stage_strides(&self) -> [usize; STAGE_COUNT] {
        let p = &self.plan;
        [
            p.conv[0].output_len(),
            p.pool_out_len(0),
            p.pool_out_len(0),
            p.conv[1].output_len(),
            p.pool_out_len(1),
            p.pool_out_len(1),
            p.conv[2].output_len(),
            p.pool_out_len(2),
            p.pool_out_len(2),
            self.spec.fc_hidden,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{drainage_loss_grad, drainage_loss_logit, DrainageParams};

    fn tiny_spec() -> Cnn3Spec {
        Cnn3Spec {
            height: 8,
            width: 8,
            in_channels: 1,
            conv_channels: [2, 3, 3],
            fc_hidden: 4,
            num_classes: 2,
            drainage: DrainageHead::Learned,
            init_seed: 13,
        }
    }

    fn random_batch(rows: usize, dim: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        Matrix::from_vec(rows, dim, data).unwrap()
    }

    #[test]
    fn plan_matches_hand_computed_shapes() {
        let m = Cnn3::new(tiny_spec()).unwrap();
        // 8 → 4 → 2 → 1 spatially; flat = 3·1·1.
        assert_eq!(m.plan.flat, 3);
        assert_eq!(m.input_dim(), 64);
        assert!(m.params().total_len() <= 500, "{}", m.params().total_len());
    }

    #[test]
    fn batched_forward_matches_single() {
        let m = Cnn3::new(tiny_spec()).unwrap();
        let batch = random_batch(3, 64, 2);
        let b = m.forward_batch(&batch).unwrap();
        for i in 0..3 {
            let s = m.forward_one(batch.row(i)).unwrap();
            for (x, y) in s.as_slice().iter().zip(b[i].as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cached_forward_agrees_with_plain_forward() {
        let m = Cnn3::new(tiny_spec()).unwrap();
        let batch = random_batch(5, 64, 3);
        let plain = m.forward_batch(&batch).unwrap();
        let (cached, _) = m.forward_cached(&batch).unwrap();
        for (a, b) in plain.iter().zip(&cached) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn gradient_check_against_finite_differences() {
        let mut m = Cnn3::new(tiny_spec()).unwrap();
        let params = DrainageParams::new(1.0, 1.0).unwrap();
        let batch = random_batch(2, 64, 7);
        let targets = [0usize, 1];

        let loss_of = |m: &Cnn3| -> f64 {
            let logits = m.forward_batch(&batch).unwrap();
            logits
                .iter()
                .zip(&targets)
                .map(|(z, &t)| drainage_loss_logit(z, t, &params).unwrap())
                .sum::<f64>()
                / batch.rows() as f64
        };

        let (logits, cache) = m.forward_cached(&batch).unwrap();
        let grads: Vec<LossGrad> = logits
            .iter()
            .zip(&targets)
            .map(|(z, &t)| drainage_loss_grad(z, t, &params).unwrap())
            .collect();
        let analytic = m.backward(&batch, &cache, &grads).unwrap();

        let h = 1e-5;
        for ti in 0..analytic.tensors.len() {
            let len = analytic.tensors[ti].data.len();
            for pi in (0..len).step_by(3) {
                let orig = m.params().tensors[ti].data[pi];
                m.params_mut().tensors[ti].data[pi] = orig + h;
                let lp = loss_of(&m);
                m.params_mut().tensors[ti].data[pi] = orig - h;
                let lm = loss_of(&m);
                m.params_mut().tensors[ti].data[pi] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic.tensors[ti].data[pi];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    rel <= 1e-4,
                    "tensor {ti} param {pi}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn constant_head_gradients_match_masked_learned_slot() {
        let mut spec = tiny_spec();
        spec.drainage = DrainageHead::Constant(2.0);
        let m = Cnn3::new(spec).unwrap();
        let batch = random_batch(2, 64, 9);
        let (logits, cache) = m.forward_cached(&batch).unwrap();
        assert!(logits.iter().all(|z| z.drainage() == 2.0));

        let full = vec![
            LossGrad::new(vec![0.2, -0.5, 9.0]),
            LossGrad::new(vec![-0.1, 0.4, -3.0]),
        ];
        let masked = vec![
            LossGrad::new(vec![0.2, -0.5, 0.0]),
            LossGrad::new(vec![-0.1, 0.4, 0.0]),
        ];
        let a = m.backward(&batch, &cache, &full).unwrap();
        let b = m.backward(&batch, &cache, &masked).unwrap();
        assert_eq!(a, b);
    }
}
