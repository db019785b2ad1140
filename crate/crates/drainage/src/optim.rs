//! Training engine: SGD with momentum, cosine learning-rate decay, L1/L2
//! regularization, and global gradient-norm clipping.

use crate::data::LabeledDataset;
use crate::eval::predict_closed;
use crate::loss::{Loss, LossGrad};
use crate::model::{Model, ParamKind, ParameterSet};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    None,
    /// λ‖w‖₁ with subgradient λ·sign(w), sign(0) = 0.
    L1(f64),
    /// λ‖w‖₂² with gradient 2λ·w.
    L2(f64),
}

impl Regularization {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Regularization::None);
        }
        let parse_lambda = |v: &str| -> Result<f64> {
            let lambda: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad regularization strength '{v}'")))?;
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config(format!(
                    "regularization strength must be >= 0, got {lambda}"
                )));
            }
            Ok(lambda)
        };
        if let Some(v) = s.strip_prefix("l1:") {
            return Ok(Regularization::L1(parse_lambda(v)?));
        }
        if let Some(v) = s.strip_prefix("l2:") {
            return Ok(Regularization::L2(parse_lambda(v)?));
        }
        Err(Error::Config(format!(
            "bad regularization '{s}'; expected none, l1:<λ>, or l2:<λ>"
        )))
    }
}

impl std::fmt::Display for Regularization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regularization::None => write!(f, "none"),
            Regularization::L1(l) => write!(f, "l1:{l}"),
            Regularization::L2(l) => write!(f, "l2:{l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    Cosine,
}

impl Schedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(Error::Config(format!(
                "bad schedule '{other}'; expected constant or cosine"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub reg: Regularization,
    /// Whether the penalty also covers bias tensors.
    pub reg_biases: bool,
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lr0 must be finite and > 0, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "clip_norm must be finite and > 0, got {c}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            reg: Regularization::None,
            reg_biases: false,
            clip_norm: Some(5.0),
            schedule: Schedule::Cosine,
            shuffle_seed: 0,
        }
    }
}

/// Per-epoch record: learning rate, mean training loss, optional
/// closed-drainage validation accuracy.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV export: `epoch,lr,train_loss,val_acc` (empty val_acc when absent).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,lr,train_loss,val_acc")?;
        for e in &self.epochs {
            let val = e.val_acc.map_or(String::new(), |v| v.to_string());
            writeln!(w, "{},{},{},{val}", e.epoch, e.lr, e.train_loss)?;
        }
        Ok(())
    }
}

/// lr0 · ½(1 + cos(π · epoch / total)); equals lr0 at epoch 0 and decays
/// toward 0.
pub fn cosine_lr(lr0: f64, epoch: usize, total_epochs: usize) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::InvalidParameter(format!(
            "epoch {epoch} out of range for {total_epochs} total"
        )));
    }
    let t = epoch as f64 / total_epochs as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// One SGD-with-momentum step over all tensors:
/// g' = grad + reg term, globally rescaled so ‖g'‖₂ ≤ clip_norm when set;
/// v ← momentum·v − lr·g'; w ← w + v.
pub fn sgd_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    velocity: &mut ParameterSet,
    lr: f64,
    momentum: f64,
    reg: Regularization,
    reg_biases: bool,
    clip_norm: Option<f64>,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Training(
            "non-finite gradients encountered in sgd step".into(),
        ));
    }

    // Effective gradient with the penalty term folded in.
    let mut effective: Vec<Vec<f64>> = Vec::with_capacity(grads.tensors.len());
    for (g, p) in grads.tensors.iter().zip(&params.tensors) {
        let mut e = g.data.clone();
        let apply = reg_biases || p.kind == ParamKind::Weight;
        match reg {
            Regularization::None => {}
            Regularization::L1(lambda) if apply => {
                for (ev, wv) in e.iter_mut().zip(&p.data) {
                    *ev += lambda * wv.signum() * f64::from(*wv != 0.0);
                }
            }
            Regularization::L2(lambda) if apply => {
                for (ev, wv) in e.iter_mut().zip(&p.data) {
                    *ev += 2.0 * lambda * wv;
                }
            }
            _ => {}
        }
        effective.push(e);
    }

    if let Some(max_norm) = clip_norm {
        let norm = effective
            .iter()
            .flat_map(|e| e.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for e in &mut effective {
                for v in e.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }

    for ((p, v), e) in params
        .tensors
        .iter_mut()
        .zip(&mut velocity.tensors)
        .zip(&effective)
    {
        for ((pv, vv), ev) in p.data.iter_mut().zip(&mut v.data).zip(e) {
            *vv = momentum * *vv - lr * ev;
            *pv += *vv;
        }
    }
    Ok(())
}

/// Full training loop: per epoch, a seeded shuffle into minibatches, then
/// forward → per-sample loss gradients → backward → sgd_step. Deterministic
/// given the config seeds. Returns the per-epoch history.
pub fn train(
    model: &mut dyn Model,
    loss: &dyn Loss,
    train_ds: &LabeledDataset,
    val_ds: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_ds.is_empty() && config.epochs > 0 {
        return Err(Error::InvalidParameter(
            "cannot train on an empty dataset".into(),
        ));
    }
    if train_ds.num_classes != model.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} classes, dataset {}",
            model.num_classes(),
            train_ds.num_classes
        )));
    }

    let mut velocity = model.params().zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_ds.len()).collect();

    for epoch in 0..config.epochs {
        let lr = match config.schedule {
            Schedule::Constant => config.lr0,
            Schedule::Cosine => cosine_lr(config.lr0, epoch, config.epochs)?,
        };

        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_ds.features.select_rows(chunk);
            let (logits, cache) = model.forward_cached(&batch)?;

            let mut grads: Vec<LossGrad> = Vec::with_capacity(chunk.len());
            for (z, &i) in logits.iter().zip(chunk) {
                let t = train_ds.labels[i];
                loss_sum += loss.value(z, t)?;
                grads.push(loss.grad(z, t)?);
            }

            let param_grads = model.backward(&batch, &cache, &grads)?;
            if !param_grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite parameter gradients at epoch {epoch}"
                )));
            }
            sgd_step(
                model.params_mut(),
                &param_grads,
                &mut velocity,
                lr,
                config.momentum,
                config.reg,
                config.reg_biases,
                config.clip_norm,
            )?;
        }

        let val_acc = match val_ds {
            Some(val) if !val.is_empty() => {
                let logits = model.forward_batch(&val.features)?;
                let hits = logits
                    .iter()
                    .zip(&val.labels)
                    .filter(|(z, &l)| predict_closed(z) == l)
                    .count();
                Some(hits as f64 / val.len() as f64)
            }
            _ => None,
        };

        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / train_ds.len() as f64,
            val_acc,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{build, DrainageLoss, DrainageParams, LossSpec};
    use crate::mat::Matrix;
    use crate::model::{self, DrainageHead, MlpSpec, ModelSpec, RbfLinearSpec};

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 120).unwrap(), 0.1);
        assert!((cosine_lr(0.1, 60, 120).unwrap() - 0.05).abs() < 1e-15);
        // epoch 119 of 120: lr0·½(1 + cos(119π/120)).
        let expected = 0.1 * 0.5 * (1.0 + (119.0 * std::f64::consts::PI / 120.0).cos());
        assert!((cosine_lr(0.1, 119, 120).unwrap() - expected).abs() < 1e-15);
        assert!((cosine_lr(0.1, 119, 120).unwrap() - 0.1 * 1.7133751222137006e-4).abs() < 1e-12);
        assert!(cosine_lr(0.1, 120, 120).is_err());
    }

    #[test]
    fn cosine_schedule_is_decreasing() {
        let mut last = f64::INFINITY;
        for e in 0..50 {
            let lr = cosine_lr(1.0, e, 50).unwrap();
            assert!(lr < last);
            last = lr;
        }
    }

    fn tiny_params(values: &[f64]) -> ParameterSet {
        ParameterSet {
            tensors: vec![crate::model::Tensor {
                name: "w".into(),
                kind: ParamKind::Weight,
                shape: vec![values.len()],
                data: values.to_vec(),
            }],
        }
    }

    #[test]
    fn zero_grads_zero_velocity_is_a_fixed_point() {
        let mut params = tiny_params(&[1.0, -2.0, 3.0]);
        let grads = tiny_params(&[0.0, 0.0, 0.0]);
        let mut vel = params.zeros_like();
        sgd_step(
            &mut params,
            &grads,
            &mut vel,
            0.1,
            0.9,
            Regularization::None,
            false,
            None,
        )
        .unwrap();
        assert_eq!(params.tensors[0].data, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn no_momentum_is_plain_gradient_descent() {
        let mut params = tiny_params(&[1.0, 1.0]);
        let grads = tiny_params(&[0.5, -0.25]);
        let mut vel = params.zeros_like();
        sgd_step(
            &mut params,
            &grads,
            &mut vel,
            0.1,
            0.0,
            Regularization::None,
            false,
            None,
        )
        .unwrap();
        assert!((params.tensors[0].data[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((params.tensors[0].data[1] - (1.0 + 0.1 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn clipping_rescales_to_exact_norm() {
        let mut params = tiny_params(&[0.0, 0.0]);
        // Norm 50 gradient with clip 5: applied update is lr·5 in direction.
        let grads = tiny_params(&[30.0, 40.0]);
        let mut vel = params.zeros_like();
        sgd_step(
            &mut params,
            &grads,
            &mut vel,
            1.0,
            0.0,
            Regularization::None,
            false,
            Some(5.0),
        )
        .unwrap();
        let applied = [-params.tensors[0].data[0], -params.tensors[0].data[1]];
        let norm = (applied[0] * applied[0] + applied[1] * applied[1]).sqrt();
        assert!((norm - 5.0).abs() < 1e-12);
        // Direction preserved: 3-4-5 triangle.
        assert!((applied[0] - 3.0).abs() < 1e-12);
        assert!((applied[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_leaves_small_gradients_alone() {
        let mut params = tiny_params(&[0.0]);
        let grads = tiny_params(&[0.5]);
        let mut vel = params.zeros_like();
        sgd_step(
            &mut params,
            &grads,
            &mut vel,
            1.0,
            0.0,
            Regularization::None,
            false,
            Some(5.0),
        )
        .unwrap();
        assert!((params.tensors[0].data[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn l2_decays_weights_with_zero_data_gradient() {
        let mut params = tiny_params(&[2.0, -2.0]);
        let grads = tiny_params(&[0.0, 0.0]);
        let mut vel = params.zeros_like();
        let mut last_norm = params.l2_norm();
        for _ in 0..5 {
            sgd_step(
                &mut params,
                &grads,
                &mut vel,
                0.05,
                0.0,
                Regularization::L2(0.1),
                true,
                None,
            )
            .unwrap();
            let norm = params.l2_norm();
            assert!(norm < last_norm);
            last_norm = norm;
        }
    }

    #[test]
    fn l1_subgradient_keeps_zero_weights_at_rest() {
        let mut params = tiny_params(&[0.0]);
        let grads = tiny_params(&[0.0]);
        let mut vel = params.zeros_like();
        sgd_step(
            &mut params,
            &grads,
            &mut vel,
            0.1,
            0.0,
            Regularization::L1(1.0),
            true,
            None,
        )
        .unwrap();
        assert_eq!(params.tensors[0].data[0], 0.0);
    }

    #[test]
    fn biases_are_exempt_unless_flagged() {
        let mut params = ParameterSet {
            tensors: vec![
                crate::model::Tensor {
                    name: "w".into(),
                    kind: ParamKind::Weight,
                    shape: vec![1],
                    data: vec![1.0],
                },
                crate::model::Tensor {
                    name: "b".into(),
                    kind: ParamKind::Bias,
                    shape: vec![1],
                    data: vec![1.0],
                },
            ],
        };
        let grads = params.zeros_like();
        let mut vel = params.zeros_like();
        sgd_step(
            &mut params,
            &grads,
            &mut vel,
            0.1,
            0.0,
            Regularization::L2(0.5),
            false,
            None,
        )
        .unwrap();
        assert!(params.tensors[0].data[0] < 1.0);
        assert_eq!(params.tensors[1].data[0], 1.0);
    }

    #[test]
    fn non_finite_gradients_abort() {
        let mut params = tiny_params(&[1.0]);
        let grads = tiny_params(&[f64::NAN]);
        let mut vel = params.zeros_like();
        assert!(matches!(
            sgd_step(
                &mut params,
                &grads,
                &mut vel,
                0.1,
                0.0,
                Regularization::None,
                false,
                None
            ),
            Err(Error::Training(_))
        ));
    }

    fn two_blob_dataset(n: usize) -> LabeledDataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = i % 2;
                let offset = if c == 0 { -2.0 } else { 2.0 };
                vec![offset + (i as f64 * 0.37).sin() * 0.3, (i as f64 * 0.73).cos() * 0.3]
            })
            .collect();
        LabeledDataset::new(
            Matrix::from_rows(&rows).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let spec = ModelSpec::Mlp(MlpSpec {
            input_dim: 2,
            hidden: vec![4],
            num_classes: 2,
            drainage: DrainageHead::Learned,
            init_seed: 3,
        });
        let mut m = model::build(&spec).unwrap();
        let before = m.params().clone();
        let loss = DrainageLoss::new(DrainageParams::new(1.0, 1.0).unwrap());
        let ds = two_blob_dataset(16);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train(m.as_mut(), &loss, &ds, None, &cfg).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(m.params(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = two_blob_dataset(60);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            shuffle_seed: 11,
            ..TrainConfig::default()
        };
        let loss = build(&LossSpec::default()).unwrap();
        let run = || {
            let spec = ModelSpec::Mlp(MlpSpec {
                input_dim: 2,
                hidden: vec![8],
                num_classes: 2,
                drainage: DrainageHead::Learned,
                init_seed: 7,
            });
            let mut m = model::build(&spec).unwrap();
            train(m.as_mut(), loss.as_ref(), &ds, None, &cfg).unwrap();
            m.params().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_loss_and_beats_chance() {
        let ds = two_blob_dataset(120);
        let spec = ModelSpec::RbfLinear(RbfLinearSpec {
            num_classes: 2,
            grid: 8,
            span: 4.0,
            gamma: 0.25,
            drainage: DrainageHead::Learned,
            init_seed: 0,
        });
        let mut m = model::build(&spec).unwrap();
        let loss = DrainageLoss::new(DrainageParams::new(1.0, 1.0).unwrap());
        let cfg = TrainConfig {
            lr0: 0.5,
            epochs: 40,
            batch_size: 30,
            reg: Regularization::L2(0.01),
            ..TrainConfig::default()
        };
        let history = train(m.as_mut(), &loss, &ds, Some(&ds), &cfg).unwrap();
        let first = history.epochs.first().unwrap().train_loss;
        let last = history.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert!(history.epochs.last().unwrap().val_acc.unwrap() > 0.9);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let mut h = TrainHistory::default();
        h.epochs.push(EpochStats {
            epoch: 0,
            lr: 0.1,
            train_loss: 1.5,
            val_acc: Some(0.5),
        });
        h.epochs.push(EpochStats {
            epoch: 1,
            lr: 0.05,
            train_loss: 1.2,
            val_acc: None,
        });
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,val_acc\n"));
        assert!(text.contains("0,0.1,1.5,0.5\n"));
        assert!(text.contains("1,0.05,1.2,\n"));
    }
}
