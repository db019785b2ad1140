//! Flat `key = value` experiment configs with section prefixes (`data.`,
//! `model.`, `train.`, `loss.`, `eval.`, `osr.`), `#` comments, and strict
//! unknown-key rejection.
//!
//! Every random decision is seeded from the config alone: module seeds
//! default to derivations of the top-level `seed` and can be pinned
//! individually. Named presets ship embedded; `load` accepts either a preset
//! name or a path.

use crate::data::{NoiseKind, NoiseSpec, RingSpec};
use crate::loss::LossSpec;
use crate::model::ModelSpec;
use crate::optim::{Regularization, Schedule, TrainConfig};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const PRESETS: &[(&str, &str)] = &[
    ("ring_toy", include_str!("../presets/ring_toy.cfg")),
    ("mnist_relabel", include_str!("../presets/mnist_relabel.cfg")),
    ("mnist_osr", include_str!("../presets/mnist_osr.cfg")),
    (
        "asym_noise_synthetic",
        include_str!("../presets/asym_noise_synthetic.cfg"),
    ),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Where the datasets come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Ring toy: a freshly generated noisy train ring plus a clean test ring
    /// from the same distribution.
    Ring {
        spec: RingSpec,
        test_n: usize,
        test_relabel_prob: f64,
        test_seed: u64,
    },
    /// Gaussian blobs split into train/val/test.
    Blobs {
        n: usize,
        num_classes: usize,
        center_radius: f64,
        std: f64,
        seed: u64,
        split: [f64; 3],
        split_seed: u64,
    },
    /// MNIST-style IDX file pairs.
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// 0 keeps everything.
        subsample: usize,
        subsample_seed: u64,
        /// Fraction of the (subsampled) train set carved off as validation.
        val_fraction: f64,
        split_seed: u64,
    },
    /// A dataset CSV (`label,clean_label,f0,...`) split into train/val/test.
    Csv {
        path: PathBuf,
        num_classes: Option<usize>,
        split: [f64; 3],
        split_seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub source: DataSource,
    /// Applied to the training split only; test labels stay untouched.
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Write the test split as a dataset CSV next to the other outputs.
    pub export_test: bool,
    /// Write the drainage ranking CSV of the test split.
    pub rank: bool,
}

#[derive(Debug, Clone)]
pub struct OsrConfig {
    pub splits: usize,
    pub removed_per_split: usize,
    pub zd_sweep: Vec<f64>,
    pub split: [f64; 3],
    pub mask_seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub loss: LossSpec,
    pub eval: EvalConfig,
    pub osr: Option<OsrConfig>,
}

/// Parses the flat key-value syntax; duplicate keys are rejected.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
        })?;
        let key = k.trim().to_string();
        if pairs.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
    }
    Ok(pairs)
}

struct Pairs {
    map: BTreeMap<String, String>,
}

impl Pairs {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{s}' for {key}"))),
            None => Ok(default),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let s = self
            .map
            .remove(key)
            .ok_or_else(|| Error::Config(format!("missing {key}")))?;
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad value '{s}' for {key}")))
    }

    fn seed_or(&mut self, key: &str, derived: u64) -> Result<u64> {
        self.parse(key, derived)
    }
}

fn parse_usize_list(s: &str, key: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' in {key}")))
        })
        .collect()
}

fn parse_f64_list(s: &str, key: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' in {key}")))
        })
        .collect()
}

fn parse_split(s: &str, key: &str) -> Result<[f64; 3]> {
    let v = parse_f64_list(s, key)?;
    if v.len() != 3 {
        return Err(Error::Config(format!(
            "{key} needs exactly 3 comma-separated fractions"
        )));
    }
    Ok([v[0], v[1], v[2]])
}

fn parse_flip_map(s: &str) -> Result<BTreeMap<usize, usize>> {
    if s == "cifar10_asym" {
        return Ok(NoiseSpec::cifar10_flip_map());
    }
    let mut map = BTreeMap::new();
    for entry in s.split(',') {
        let (from, to) = entry.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "bad flip map entry '{entry}'; expected from:to or a named preset"
            ))
        })?;
        let from: usize = from
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad flip map class '{from}'")))?;
        let to: usize = to
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad flip map class '{to}'")))?;
        map.insert(from, to);
    }
    Ok(map)
}

impl ExperimentConfig {
    /// Parses a config; every key must be consumed.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Pairs {
            map: parse_pairs(text)?,
        };

        let seed: u64 = p.parse("seed", 0)?;
        let derive = |k: u64| seed.wrapping_mul(10).wrapping_add(k);

        let out_dir = PathBuf::from(
            p.take("out_dir")
                .ok_or_else(|| Error::Config("missing out_dir".into()))?,
        );

        // data.*
        let data_kind = p
            .take("data.kind")
            .ok_or_else(|| Error::Config("missing data.kind".into()))?;
        let source = match data_kind.as_str() {
            "ring" => {
                let d = RingSpec::default();
                let n = p.parse("data.n", d.n)?;
                DataSource::Ring {
                    spec: RingSpec {
                        n,
                        num_classes: p.parse("data.num_classes", d.num_classes)?,
                        radius_mean: p.parse("data.radius_mean", d.radius_mean)?,
                        radius_std: p.parse("data.radius_std", d.radius_std)?,
                        relabel_prob: p.parse("data.relabel_prob", d.relabel_prob)?,
                        seed: p.seed_or("data.seed", derive(1))?,
                    },
                    test_n: p.parse("data.test_n", n)?,
                    test_relabel_prob: p.parse("data.test_relabel_prob", 0.0)?,
                    test_seed: p.seed_or("data.test_seed", derive(2))?,
                }
            }
            "blobs" => DataSource::Blobs {
                n: p.require("data.n")?,
                num_classes: p.require("data.num_classes")?,
                center_radius: p.parse("data.center_radius", 6.0)?,
                std: p.parse("data.std", 1.0)?,
                seed: p.seed_or("data.seed", derive(1))?,
                split: match p.take("data.split") {
                    Some(s) => parse_split(&s, "data.split")?,
                    None => [0.8, 0.0, 0.2],
                },
                split_seed: p.seed_or("data.split_seed", derive(3))?,
            },
            "mnist" => DataSource::Mnist {
                train_images: PathBuf::from(
                    p.take("data.train_images")
                        .ok_or_else(|| Error::Config("missing data.train_images".into()))?,
                ),
                train_labels: PathBuf::from(
                    p.take("data.train_labels")
                        .ok_or_else(|| Error::Config("missing data.train_labels".into()))?,
                ),
                test_images: PathBuf::from(
                    p.take("data.test_images")
                        .ok_or_else(|| Error::Config("missing data.test_images".into()))?,
                ),
                test_labels: PathBuf::from(
                    p.take("data.test_labels")
                        .ok_or_else(|| Error::Config("missing data.test_labels".into()))?,
                ),
                subsample: p.parse("data.subsample", 0)?,
                subsample_seed: p.seed_or("data.subsample_seed", derive(4))?,
                val_fraction: p.parse("data.val_fraction", 0.0)?,
                split_seed: p.seed_or("data.split_seed", derive(3))?,
            },
            "csv" => DataSource::Csv {
                path: PathBuf::from(
                    p.take("data.path")
                        .ok_or_else(|| Error::Config("missing data.path".into()))?,
                ),
                num_classes: match p.take("data.num_classes") {
                    Some(s) => Some(s.trim().parse().map_err(|_| {
                        Error::Config(format!("bad value '{s}' for data.num_classes"))
                    })?),
                    None => None,
                },
                split: match p.take("data.split") {
                    Some(s) => parse_split(&s, "data.split")?,
                    None => [0.8, 0.0, 0.2],
                },
                split_seed: p.seed_or("data.split_seed", derive(3))?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown data.kind '{other}'; available: ring, blobs, mnist, csv"
                )))
            }
        };

        let noise_kind = match p.take("data.noise.kind").as_deref() {
            None | Some("none") => NoiseKind::None,
            Some("asymmetric_map") => NoiseKind::AsymmetricMap,
            Some("relabel_to_range") => NoiseKind::RelabelToRange,
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown data.noise.kind '{other}'; available: none, asymmetric_map, relabel_to_range"
                )))
            }
        };
        let noise = NoiseSpec {
            rate: p.parse(
                "data.noise.rate",
                if noise_kind == NoiseKind::RelabelToRange {
                    1.0
                } else {
                    0.0
                },
            )?,
            flip_map: match p.take("data.noise.flip_map") {
                Some(s) => Some(parse_flip_map(&s)?),
                None => None,
            },
            source_classes: match p.take("data.noise.sources") {
                Some(s) => Some(parse_usize_list(&s, "data.noise.sources")?),
                None => None,
            },
            target_range: match p.take("data.noise.targets") {
                Some(s) => Some(parse_usize_list(&s, "data.noise.targets")?),
                None => None,
            },
            seed: p.seed_or("data.noise.seed", derive(5))?,
            kind: noise_kind,
        };

        // model.* — default the init seed before handing off.
        if !p.map.contains_key("model.init_seed") {
            p.map
                .insert("model.init_seed".into(), derive(6).to_string());
        }
        let model = ModelSpec::from_pairs(&mut p.map)?;

        // train.*
        let default_train = TrainConfig::default();
        let train = TrainConfig {
            lr0: p.parse("train.lr0", default_train.lr0)?,
            momentum: p.parse("train.momentum", default_train.momentum)?,
            epochs: p.parse("train.epochs", default_train.epochs)?,
            batch_size: p.parse("train.batch_size", default_train.batch_size)?,
            reg: match p.take("train.reg") {
                Some(s) => Regularization::parse(&s)?,
                None => Regularization::None,
            },
            reg_biases: p.parse("train.reg_biases", false)?,
            clip_norm: match p.take("train.clip_norm").as_deref() {
                None => Some(5.0),
                Some("none") => None,
                Some(s) => Some(s.trim().parse().map_err(|_| {
                    Error::Config(format!("bad value '{s}' for train.clip_norm"))
                })?),
            },
            schedule: match p.take("train.schedule") {
                Some(s) => Schedule::parse(&s)?,
                None => Schedule::Cosine,
            },
            shuffle_seed: p.seed_or("train.shuffle_seed", derive(7))?,
        };
        train.validate()?;

        // loss.*
        let default_loss = LossSpec::default();
        let loss = LossSpec {
            kind: p.take("loss.kind").unwrap_or(default_loss.kind),
            alpha: p.parse("loss.alpha", default_loss.alpha)?,
            beta: match p.take("loss.beta") {
                Some(s) => Some(s.trim().parse().map_err(|_| {
                    Error::Config(format!("bad value '{s}' for loss.beta"))
                })?),
                None => None,
            },
            q: p.parse("loss.q", default_loss.q)?,
            a: p.parse("loss.a", default_loss.a)?,
            b: p.parse("loss.b", default_loss.b)?,
            log_clip: p.parse("loss.log_clip", default_loss.log_clip)?,
        };

        // eval.*
        let eval = EvalConfig {
            export_test: p.parse("eval.export_test", true)?,
            rank: p.parse("eval.rank", false)?,
        };

        // osr.* (present only when any osr key appears)
        let has_osr = p.map.keys().any(|k| k.starts_with("osr."));
        let osr = if has_osr {
            Some(OsrConfig {
                splits: p.parse("osr.splits", 5)?,
                removed_per_split: p.parse("osr.removed_per_split", 4)?,
                zd_sweep: match p.take("osr.zd_sweep") {
                    Some(s) => parse_f64_list(&s, "osr.zd_sweep")?,
                    None => vec![1.0, 2.0, 3.0, 4.0, 5.0],
                },
                split: match p.take("osr.split") {
                    Some(s) => parse_split(&s, "osr.split")?,
                    None => [0.7, 0.15, 0.15],
                },
                mask_seed: p.seed_or("osr.mask_seed", derive(8))?,
                split_seed: p.seed_or("osr.split_seed", derive(9))?,
            })
        } else {
            None
        };

        if !p.map.is_empty() {
            let keys: Vec<&str> = p.map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown config keys: {}",
                keys.join(", ")
            )));
        }

        Ok(ExperimentConfig {
            out_dir,
            seed,
            data: DataConfig { source, noise },
            model,
            train,
            loss,
            eval,
            osr,
        })
    }

    /// Resolves a preset name or reads a file, applying optional `out`/`seed`
    /// overrides before parsing (a seed override re-derives every module
    /// seed that the config does not pin explicitly).
    pub fn load(
        path_or_preset: &str,
        out_override: Option<&Path>,
        seed_override: Option<u64>,
    ) -> Result<Self> {
        let base = match preset_text(path_or_preset) {
            Some(text) => text.to_string(),
            None => std::fs::read_to_string(path_or_preset).map_err(|e| {
                Error::Config(format!(
                    "'{path_or_preset}' is neither a preset ({}) nor a readable file: {e}",
                    preset_names().join(", ")
                ))
            })?,
        };
        let mut text = String::new();
        if let Some(seed) = seed_override {
            text.push_str(&format!("seed = {seed}\n"));
        }
        if let Some(out) = out_override {
            text.push_str(&format!("out_dir = {}\n", out.display()));
        }
        for line in base.lines() {
            let stripped = line.split('#').next().unwrap_or("").trim();
            let key = stripped.split('=').next().unwrap_or("").trim();
            if (seed_override.is_some() && key == "seed")
                || (out_override.is_some() && key == "out_dir")
            {
                continue;
            }
            text.push_str(line);
            text.push('\n');
        }
        Self::from_text(&text)
    }
}
