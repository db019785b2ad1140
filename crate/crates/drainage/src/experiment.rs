//! End-to-end experiment drivers shared by the CLI and the acceptance suite:
//! dataset assembly from a config, the train-evaluate-export pipeline, the
//! open-set protocol with its constant-drainage sweep, and checkpoint-based
//! ranking.

use crate::config::{DataSource, ExperimentConfig, OsrConfig};
use crate::data::{
    self, apply_noise, load_mnist_idx, make_blobs_dataset, make_ring_dataset, mask_classes,
    LabeledDataset, NoiseKind, RingSpec,
};
use crate::eval::{
    self, evaluate, osr_scores, predict_closed, roc_auc, EvalReport, ScoreRule,
};
use crate::loss::{self, LossSpec};
use crate::model::{self, save_checkpoint, DrainageHead, Model};
use crate::optim::{train, TrainConfig, TrainHistory};
use crate::svg::scatter_with_drainage_regions;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};

/// Train/validation/test triple produced from a data config.
pub struct DataBundle {
    pub train: LabeledDataset,
    pub val: Option<LabeledDataset>,
    pub test: LabeledDataset,
}

/// Builds the three splits and applies the configured label noise to the
/// training split only.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let (train, val, test) = match &cfg.data.source {
        DataSource::Ring {
            spec,
            test_n,
            test_relabel_prob,
            test_seed,
        } => {
            let train = make_ring_dataset(spec)?;
            let test = make_ring_dataset(&RingSpec {
                n: *test_n,
                relabel_prob: *test_relabel_prob,
                seed: *test_seed,
                ..spec.clone()
            })?;
            (train, None, test)
        }
        DataSource::Blobs {
            n,
            num_classes,
            center_radius,
            std,
            seed,
            split,
            split_seed,
        } => {
            let pool = make_blobs_dataset(*n, *num_classes, *center_radius, *std, *seed)?;
            let (tr, va, te) = data::split(&pool, *split, *split_seed)?;
            (tr, Some(va), te)
        }
        DataSource::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            subsample,
            subsample_seed,
            val_fraction,
            split_seed,
        } => {
            let mut train = load_mnist_idx(train_images, train_labels)?;
            if *subsample > 0 {
                train = train.subsample(*subsample, *subsample_seed);
            }
            let test = load_mnist_idx(test_images, test_labels)?;
            if *val_fraction > 0.0 {
                let (tr, va, _) =
                    data::split(&train, [1.0 - val_fraction, *val_fraction, 0.0], *split_seed)?;
                (tr, Some(va), test)
            } else {
                (train, None, test)
            }
        }
        DataSource::Csv {
            path,
            num_classes,
            split,
            split_seed,
        } => {
            let file = fs::File::open(path)?;
            let pool = data::read_csv(std::io::BufReader::new(file), *num_classes)?;
            let (tr, va, te) = data::split(&pool, *split, *split_seed)?;
            (tr, Some(va), te)
        }
    };

    let train = if cfg.data.noise.kind == NoiseKind::None {
        train
    } else {
        apply_noise(&train, &cfg.data.noise)?
    };
    let val = val.filter(|v| !v.is_empty());
    Ok(DataBundle { train, val, test })
}

/// The full clean sample pool (no label noise) used by the open-set
/// protocol.
pub fn build_pool(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    match &cfg.data.source {
        DataSource::Ring {
            spec,
            test_n,
            test_seed,
            ..
        } => {
            let a = make_ring_dataset(&RingSpec {
                relabel_prob: 0.0,
                ..spec.clone()
            })?;
            let b = make_ring_dataset(&RingSpec {
                n: *test_n,
                relabel_prob: 0.0,
                seed: *test_seed,
                ..spec.clone()
            })?;
            a.concat(&b)
        }
        DataSource::Blobs {
            n,
            num_classes,
            center_radius,
            std,
            seed,
            ..
        } => make_blobs_dataset(*n, *num_classes, *center_radius, *std, *seed),
        DataSource::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            subsample,
            subsample_seed,
            ..
        } => {
            let mut train = load_mnist_idx(train_images, train_labels)?;
            if *subsample > 0 {
                train = train.subsample(*subsample, *subsample_seed);
            }
            let test = load_mnist_idx(test_images, test_labels)?;
            train.concat(&test)
        }
        DataSource::Csv {
            path, num_classes, ..
        } => {
            let file = fs::File::open(path)?;
            data::read_csv(std::io::BufReader::new(file), *num_classes)
        }
    }
}

pub struct TrainRunSummary {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: EvalReport,
    pub history: TrainHistory,
}

impl TrainRunSummary {
    pub fn summary_line(&self) -> String {
        let final_loss = self
            .history
            .epochs
            .last()
            .map_or(f64::NAN, |e| e.train_loss);
        format!(
            "closed_acc={:.4} open_acc={:.4} final_train_loss={:.4} outputs={}",
            self.report.closed_accuracy,
            self.report.open_accuracy,
            final_loss,
            self.out_dir.display()
        )
    }
}

/// data → train → evaluate → export. No output is written until every
/// fallible input stage has succeeded.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainRunSummary> {
    let bundle = build_datasets(cfg)?;
    if bundle.train.num_classes != numeric_classes(&cfg.model) {
        return Err(Error::Config(format!(
            "model.num_classes = {} but the dataset has {} classes",
            numeric_classes(&cfg.model),
            bundle.train.num_classes
        )));
    }

    let mut model = model::build(&cfg.model)?;
    let loss = loss::build(&cfg.loss)?;
    let history = train(
        model.as_mut(),
        loss.as_ref(),
        &bundle.train,
        bundle.val.as_ref(),
        &cfg.train,
    )?;
    let report = evaluate(model.as_ref(), &bundle.test)?;

    fs::create_dir_all(&cfg.out_dir)?;
    let checkpoint = cfg.out_dir.join("model.bin");
    save_checkpoint(model.as_ref(), &checkpoint)?;
    write_file(&cfg.out_dir.join("history.csv"), |w| history.write_csv(w))?;
    write_file(&cfg.out_dir.join("eval.csv"), |w| report.write_csv(w))?;
    if cfg.eval.export_test {
        write_file(&cfg.out_dir.join("test_data.csv"), |w| {
            data::write_csv(&bundle.test, w)
        })?;
    }
    if cfg.eval.rank {
        write_file(&cfg.out_dir.join("ranking.csv"), |w| {
            eval::write_rank_csv(model.as_ref(), &bundle.test, w)
        })?;
    }

    Ok(TrainRunSummary {
        out_dir: cfg.out_dir.clone(),
        checkpoint,
        report,
        history,
    })
}

fn numeric_classes(spec: &model::ModelSpec) -> usize {
    match spec {
        model::ModelSpec::RbfLinear(s) => s.num_classes,
        model::ModelSpec::Mlp(s) => s.num_classes,
        model::ModelSpec::Cnn3(s) => s.num_classes,
    }
}

fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OsrSplitResult {
    pub removed: Vec<usize>,
    pub selected_zd: f64,
    pub ce_msp_auc: f64,
    pub drainage_msp_auc: f64,
    pub drainage_pd_auc: f64,
}

#[derive(Debug, Clone)]
pub struct OsrSummary {
    pub splits: Vec<OsrSplitResult>,
}

impl OsrSummary {
    pub fn mean(&self, f: impl Fn(&OsrSplitResult) -> f64) -> f64 {
        self.splits.iter().map(&f).sum::<f64>() / self.splits.len() as f64
    }

    pub fn summary_line(&self) -> String {
        format!(
            "mean ROC AUC over {} splits: ce/msp={:.4} drainage/msp={:.4} drainage/p_d={:.4}",
            self.splits.len(),
            self.mean(|s| s.ce_msp_auc),
            self.mean(|s| s.drainage_msp_auc),
            self.mean(|s| s.drainage_pd_auc),
        )
    }

    fn write_auc_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let k = self.splits.len();
        let mut header = String::from("loss,rule");
        for i in 0..k {
            header.push_str(&format!(",split_{i}"));
        }
        header.push_str(",mean");
        writeln!(w, "{header}")?;

        let mut row = |name: &str, f: &dyn Fn(&OsrSplitResult) -> f64| -> Result<()> {
            let mut line = name.to_string();
            for s in &self.splits {
                line.push_str(&format!(",{}", f(s)));
            }
            line.push_str(&format!(",{}", self.mean(f)));
            writeln!(w, "{line}")?;
            Ok(())
        };
        row("ce,msp", &|s| s.ce_msp_auc)?;
        row("drainage,msp", &|s| s.drainage_msp_auc)?;
        row("drainage,p_d", &|s| s.drainage_pd_auc)?;
        Ok(())
    }

    fn write_splits_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "split,removed_classes,selected_zd")?;
        for (i, s) in self.splits.iter().enumerate() {
            let removed: Vec<String> = s.removed.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{i},{},{}", removed.join(";"), s.selected_zd)?;
        }
        Ok(())
    }
}

/// The open-set protocol: for each of `osr.splits` seeded class splits,
/// remove `removed_per_split` classes, train on the kept classes, sweep the
/// constant drainage logit selecting on validation closed accuracy, and
/// score known test samples against the held-out classes with both rules.
/// Splits run in parallel; each is a pure function of its seeds.
pub fn run_osr(cfg: &ExperimentConfig) -> Result<OsrSummary> {
    let osr = cfg
        .osr
        .as_ref()
        .ok_or_else(|| Error::Config("config has no osr.* section".into()))?;
    if osr.splits == 0 || osr.zd_sweep.is_empty() {
        return Err(Error::Config(
            "osr needs at least one split and one sweep value".into(),
        ));
    }
    let pool = build_pool(cfg)?;
    if pool.num_classes <= osr.removed_per_split {
        return Err(Error::Config(format!(
            "cannot remove {} of {} classes",
            osr.removed_per_split, pool.num_classes
        )));
    }

    let results: Vec<Result<OsrSplitResult>> = (0..osr.splits)
        .into_par_iter()
        .map(|split_idx| run_osr_split(cfg, osr, &pool, split_idx))
        .collect();
    let mut splits = Vec::with_capacity(osr.splits);
    for r in results {
        splits.push(r?);
    }
    let summary = OsrSummary { splits };

    fs::create_dir_all(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("auc.csv"), |w| summary.write_auc_csv(w))?;
    write_file(&cfg.out_dir.join("splits.csv"), |w| {
        summary.write_splits_csv(w)
    })?;
    Ok(summary)
}

fn run_osr_split(
    cfg: &ExperimentConfig,
    osr: &OsrConfig,
    pool: &LabeledDataset,
    split_idx: usize,
) -> Result<OsrSplitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(osr.mask_seed.wrapping_add(split_idx as u64));
    let mut classes: Vec<usize> = (0..pool.num_classes).collect();
    classes.shuffle(&mut rng);
    let mut removed: Vec<usize> = classes[..osr.removed_per_split].to_vec();
    removed.sort_unstable();

    let (kept, held_out) = mask_classes(pool, &removed)?;
    let (train_ds, val_ds, test_ds) = data::split(
        &kept,
        osr.split,
        osr.split_seed.wrapping_add(split_idx as u64),
    )?;
    if test_ds.is_empty() || held_out.is_empty() {
        return Err(Error::InvalidParameter(
            "osr split produced an empty test or held-out set".into(),
        ));
    }

    let seed_base = cfg.seed.wrapping_mul(1000).wrapping_add(split_idx as u64 * 17);
    let train_one = |head: DrainageHead, loss_spec: &LossSpec| -> Result<Box<dyn Model>> {
        let mut spec = cfg.model.clone();
        spec.set_num_classes(kept.num_classes);
        spec.set_drainage(head);
        spec.set_init_seed(seed_base);
        let mut m = model::build(&spec)?;
        let loss = loss::build(loss_spec)?;
        let train_cfg = TrainConfig {
            shuffle_seed: cfg.train.shuffle_seed.wrapping_add(split_idx as u64 * 31),
            ..cfg.train.clone()
        };
        train(m.as_mut(), loss.as_ref(), &train_ds, None, &train_cfg)?;
        Ok(m)
    };

    let val_accuracy = |m: &dyn Model| -> Result<f64> {
        let ds = if val_ds.is_empty() { &test_ds } else { &val_ds };
        let logits = m.forward_batch(&ds.features)?;
        let hits = logits
            .iter()
            .zip(&ds.labels)
            .filter(|(z, &l)| predict_closed(z) == l)
            .count();
        Ok(hits as f64 / ds.len() as f64)
    };

    // Cross-entropy baseline with an inert constant drainage head.
    let ce_model = train_one(
        DrainageHead::Constant(0.0),
        &LossSpec {
            kind: "ce".into(),
            ..LossSpec::default()
        },
    )?;
    let ce_msp_auc = roc_auc(&osr_scores(
        ce_model.as_ref(),
        &test_ds,
        &held_out,
        ScoreRule::Msp,
    )?)?;

    // Constant-drainage sweep, selected on validation closed accuracy; ties
    // keep the earlier sweep value.
    let mut best: Option<(f64, f64, Box<dyn Model>)> = None;
    for &zd in &osr.zd_sweep {
        let m = train_one(DrainageHead::Constant(zd), &cfg.loss)?;
        let acc = val_accuracy(m.as_ref())?;
        if best.as_ref().is_none_or(|(best_acc, _, _)| acc > *best_acc) {
            best = Some((acc, zd, m));
        }
    }
    let (_, selected_zd, drainage_model) = best.expect("non-empty sweep");

    let drainage_msp_auc = roc_auc(&osr_scores(
        drainage_model.as_ref(),
        &test_ds,
        &held_out,
        ScoreRule::Msp,
    )?)?;
    let drainage_pd_auc = roc_auc(&osr_scores(
        drainage_model.as_ref(),
        &test_ds,
        &held_out,
        ScoreRule::DrainProb,
    )?)?;

    Ok(OsrSplitResult {
        removed,
        selected_zd,
        ce_msp_auc,
        drainage_msp_auc,
        drainage_pd_auc,
    })
}

/// Ranks a dataset CSV by drainage response under a checkpointed model and
/// optionally renders the 2D scatter with drainage-dominated regions shaded.
pub fn run_rank(
    checkpoint: &Path,
    data_csv: &Path,
    out_csv: &Path,
    svg_out: Option<&Path>,
) -> Result<()> {
    let model = model::load_checkpoint(checkpoint)?;
    let file = fs::File::open(data_csv)?;
    let ds = data::read_csv(std::io::BufReader::new(file), None)?;
    if ds.feature_dim() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} features, model expects {}",
            ds.feature_dim(),
            model.input_dim()
        )));
    }
    if svg_out.is_some() && ds.feature_dim() != 2 {
        return Err(Error::InvalidParameter(
            "svg output is only available for 2D datasets".into(),
        ));
    }

    write_file(&out_csv.to_path_buf(), |w| {
        eval::write_rank_csv(model.as_ref(), &ds, w)
    })?;
    if let Some(svg_path) = svg_out {
        let svg = scatter_with_drainage_regions(model.as_ref(), &ds, 120)?;
        fs::write(svg_path, svg)?;
    }
    Ok(())
}
