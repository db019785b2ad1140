//! Dataset construction: feature matrices with integer labels, label-noise
//! injection with provenance, class masking for open-set experiments, and
//! deterministic splits.
//!
//! All randomized operations take an explicit seed and are reproducible
//! byte-for-byte: identical (inputs, seed) gives identical outputs.

mod mnist;
mod ring;

pub use mnist::load_mnist_idx;
pub use ring::{
    make_blobs_dataset, make_ring_dataset, rbf_expand, RbfExpansion, RingSpec,
};

use crate::mat::Matrix;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Feature matrix plus integer labels in `[0, C)`. `clean_labels` preserves
/// pre-noise labels for diagnostics only; training never reads them.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub clean_labels: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidParameter(
                "features contain non-finite values".into(),
            ));
        }
        Ok(LabeledDataset {
            features,
            labels,
            clean_labels: None,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    /// Seeded random subsample of `n` rows (all rows when `n >= len`).
    pub fn subsample(&self, n: usize, seed: u64) -> LabeledDataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        indices.truncate(n);
        indices.sort_unstable();
        self.select(&indices)
    }

    /// Row-wise concatenation; class counts must agree.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.num_classes != other.num_classes || self.feature_dim() != other.feature_dim() {
            return Err(Error::ShapeMismatch(
                "cannot concatenate datasets with different classes or feature dims".into(),
            ));
        }
        let mut rows = Vec::with_capacity(self.len() + other.len());
        for i in 0..self.len() {
            rows.push(self.features.row(i).to_vec());
        }
        for i in 0..other.len() {
            rows.push(other.features.row(i).to_vec());
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let clean_labels = match (&self.clean_labels, &other.clean_labels) {
            (Some(a), Some(b)) => {
                let mut c = a.clone();
                c.extend_from_slice(b);
                Some(c)
            }
            (None, None) => None,
            // Mixed provenance: fall back to current labels for the side
            // without a record.
            (a, b) => {
                let mut c = a.clone().unwrap_or_else(|| self.labels.clone());
                c.extend_from_slice(&b.clone().unwrap_or_else(|| other.labels.clone()));
                Some(c)
            }
        };
        let mut ds = LabeledDataset::new(Matrix::from_rows(&rows)?, labels, self.num_classes)?;
        ds.clean_labels = clean_labels;
        Ok(ds)
    }
}

/// Label-noise generators.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    None,
    /// Class-conditional flips along a fixed class→class map at rate μ.
    AsymmetricMap,
    /// Every sample of a source class is relabeled uniformly over the target
    /// range (rate fixed at 1).
    RelabelToRange,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub flip_map: Option<BTreeMap<usize, usize>>,
    pub source_classes: Option<Vec<usize>>,
    pub target_range: Option<Vec<usize>>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            rate: 0.0,
            flip_map: None,
            source_classes: None,
            target_range: None,
            seed: 0,
        }
    }

    /// The CIFAR-10-style asymmetric preset: truck→automobile, bird→airplane,
    /// deer→horse, cat→dog (class indices 9→1, 2→0, 4→7, 3→5).
    pub fn cifar10_flip_map() -> BTreeMap<usize, usize> {
        BTreeMap::from([(9, 1), (2, 0), (4, 7), (3, 5)])
    }
}

/// Applies label noise; features are never touched. `clean_labels` records
/// the labels of the immediate input.
pub fn apply_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::InvalidParameter(format!(
            "noise rate {} outside [0, 1]",
            spec.rate
        )));
    }
    let mut out = ds.clone();
    out.clean_labels = Some(ds.labels.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    match spec.kind {
        NoiseKind::None => {}
        NoiseKind::AsymmetricMap => {
            let map = spec.flip_map.as_ref().ok_or_else(|| {
                Error::InvalidParameter("asymmetric_map noise requires a flip map".into())
            })?;
            for (&from, &to) in map {
                if from >= ds.num_classes || to >= ds.num_classes {
                    return Err(Error::InvalidParameter(format!(
                        "flip map {from}→{to} references a class outside [0, {})",
                        ds.num_classes
                    )));
                }
            }
            for label in &mut out.labels {
                if let Some(&to) = map.get(label) {
                    if rng.gen::<f64>() < spec.rate {
                        *label = to;
                    }
                }
            }
        }
        NoiseKind::RelabelToRange => {
            let sources = spec.source_classes.as_ref().ok_or_else(|| {
                Error::InvalidParameter("relabel_to_range noise requires source classes".into())
            })?;
            let targets = spec.target_range.as_ref().ok_or_else(|| {
                Error::InvalidParameter("relabel_to_range noise requires a target range".into())
            })?;
            if targets.is_empty() {
                return Err(Error::InvalidParameter("target range is empty".into()));
            }
            for &c in sources.iter().chain(targets.iter()) {
                if c >= ds.num_classes {
                    return Err(Error::InvalidParameter(format!(
                        "relabel class {c} outside [0, {})",
                        ds.num_classes
                    )));
                }
            }
            for label in &mut out.labels {
                if sources.contains(label) {
                    *label = targets[rng.gen_range(0..targets.len())];
                }
            }
        }
    }
    Ok(out)
}

/// Removes the given classes. Kept samples get labels remapped onto
/// `[0, C − |removed|)` preserving order; held-out samples keep their
/// original labels.
pub fn mask_classes(
    ds: &LabeledDataset,
    removed: &[usize],
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut removed_sorted: Vec<usize> = removed.to_vec();
    removed_sorted.sort_unstable();
    removed_sorted.dedup();
    if let Some(&bad) = removed_sorted.iter().find(|&&c| c >= ds.num_classes) {
        return Err(Error::InvalidParameter(format!(
            "cannot remove class {bad}: only {} classes",
            ds.num_classes
        )));
    }
    if removed_sorted.len() >= ds.num_classes {
        return Err(Error::InvalidParameter(
            "cannot remove every class".into(),
        ));
    }

    let mut remap = vec![None; ds.num_classes];
    let mut next = 0;
    for (c, slot) in remap.iter_mut().enumerate() {
        if !removed_sorted.contains(&c) {
            *slot = Some(next);
            next += 1;
        }
    }

    let kept_idx: Vec<usize> = (0..ds.len())
        .filter(|&i| remap[ds.labels[i]].is_some())
        .collect();
    let held_idx: Vec<usize> = (0..ds.len())
        .filter(|&i| remap[ds.labels[i]].is_none())
        .collect();

    let mut kept = ds.select(&kept_idx);
    kept.labels = kept.labels.iter().map(|&l| remap[l].unwrap()).collect();
    // Clean labels of retained classes remap too; a clean label pointing at a
    // removed class has no image, so the record is dropped wholesale.
    kept.clean_labels = kept.clean_labels.and_then(|clean| {
        clean
            .iter()
            .map(|&l| remap[l])
            .collect::<Option<Vec<usize>>>()
    });
    kept.num_classes = ds.num_classes - removed_sorted.len();

    let held_out = ds.select(&held_idx);
    Ok((kept, held_out))
}

/// Disjoint train/val/test partition via a seeded shuffle. Sizes are
/// floor(fraction · n) with the remainder distributed to train, then val,
/// then test.
pub fn split(
    ds: &LabeledDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    if fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::InvalidParameter(
            "split fractions must be non-negative".into(),
        ));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions sum to {sum}, expected 1 within 1e-9"
        )));
    }

    let n = ds.len();
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (f * n as f64).floor() as usize)
        .collect();
    let mut remainder = n - sizes.iter().sum::<usize>();
    for s in sizes.iter_mut() {
        if remainder == 0 {
            break;
        }
        *s += 1;
        remainder -= 1;
    }

    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let train = ds.select(&indices[..sizes[0]]);
    let val = ds.select(&indices[sizes[0]..sizes[0] + sizes[1]]);
    let test = ds.select(&indices[sizes[0] + sizes[1]..]);
    Ok((train, val, test))
}

/// Writes the dataset as CSV with header `label,clean_label,f0,f1,...`.
pub fn write_csv<W: Write>(ds: &LabeledDataset, mut w: W) -> Result<()> {
    let d = ds.feature_dim();
    let mut header = String::from("label,clean_label");
    for j in 0..d {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..ds.len() {
        let clean = ds.clean_labels.as_ref().map_or(ds.labels[i], |c| c[i]);
        let mut line = format!("{},{}", ds.labels[i], clean);
        for v in ds.features.row(i) {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a dataset from the CSV layout produced by [`write_csv`].
/// `num_classes` is inferred as `max(label, clean_label) + 1` unless given.
pub fn read_csv<R: BufRead>(r: R, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty dataset CSV".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "label" || cols[1] != "clean_label" {
        return Err(Error::InvalidParameter(format!(
            "bad dataset CSV header: {header}"
        )));
    }
    let d = cols.len() - 2;

    let mut labels = Vec::new();
    let mut clean = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::InvalidParameter(format!(
                "row {}: expected {} fields, got {}",
                lineno + 2,
                d + 2,
                fields.len()
            )));
        }
        let parse_label = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("row {}: bad label '{s}'", lineno + 2)))
        };
        labels.push(parse_label(fields[0])?);
        clean.push(parse_label(fields[1])?);
        let mut row = Vec::with_capacity(d);
        for f in &fields[2..] {
            row.push(f.parse::<f64>().map_err(|_| {
                Error::InvalidParameter(format!("row {}: bad feature '{f}'", lineno + 2))
            })?);
        }
        rows.push(row);
    }

    let c = num_classes.unwrap_or_else(|| {
        labels
            .iter()
            .chain(clean.iter())
            .copied()
            .max()
            .map_or(2, |m| (m + 1).max(2))
    });
    let mut ds = LabeledDataset::new(Matrix::from_rows(&rows)?, labels, c)?;
    ds.clean_labels = Some(clean);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(labels: Vec<usize>, num_classes: usize) -> LabeledDataset {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![l as f64, i as f64])
            .collect();
        LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), labels, num_classes).unwrap()
    }

    fn counts(labels: &[usize], c: usize) -> Vec<usize> {
        let mut n = vec![0; c];
        for &l in labels {
            n[l] += 1;
        }
        n
    }

    #[test]
    fn zero_rate_asymmetric_noise_is_identity() {
        let ds = toy(vec![0, 1, 2, 0, 1, 2], 3);
        let spec = NoiseSpec {
            kind: NoiseKind::AsymmetricMap,
            rate: 0.0,
            flip_map: Some(BTreeMap::from([(0, 1)])),
            seed: 5,
            ..NoiseSpec::none()
        };
        let noisy = apply_noise(&ds, &spec).unwrap();
        assert_eq!(noisy.labels, ds.labels);
        assert_eq!(noisy.clean_labels.as_ref().unwrap(), &ds.labels);
    }

    #[test]
    fn asymmetric_flip_rate_concentrates() {
        // 10^4 eligible class-0 samples, μ = 0.4: binomial concentration puts
        // the flipped fraction within [0.37, 0.43].
        let ds = toy(vec![0; 10_000], 2);
        let spec = NoiseSpec {
            kind: NoiseKind::AsymmetricMap,
            rate: 0.4,
            flip_map: Some(BTreeMap::from([(0, 1)])),
            seed: 99,
            ..NoiseSpec::none()
        };
        let noisy = apply_noise(&ds, &spec).unwrap();
        let flipped = noisy.labels.iter().filter(|&&l| l == 1).count();
        assert!((3700..=4300).contains(&flipped), "flipped {flipped}");
        assert_eq!(noisy.features, ds.features);
    }

    #[test]
    fn relabel_to_range_leaves_no_source_labels() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let ds = toy(labels, 10);
        let spec = NoiseSpec {
            kind: NoiseKind::RelabelToRange,
            rate: 1.0,
            source_classes: Some(vec![7, 8, 9]),
            target_range: Some((0..7).collect()),
            seed: 3,
            ..NoiseSpec::none()
        };
        let noisy = apply_noise(&ds, &spec).unwrap();
        assert!(noisy.labels.iter().all(|&l| l < 7));
        let clean = noisy.clean_labels.as_ref().unwrap();
        assert_eq!(clean, &ds.labels);
    }

    #[test]
    fn noise_rejects_out_of_range_map() {
        let ds = toy(vec![0, 1], 2);
        let spec = NoiseSpec {
            kind: NoiseKind::AsymmetricMap,
            rate: 0.5,
            flip_map: Some(BTreeMap::from([(5, 0)])),
            ..NoiseSpec::none()
        };
        assert!(apply_noise(&ds, &spec).is_err());
    }

    #[test]
    fn noise_is_deterministic_given_seed() {
        let ds = toy((0..500).map(|i| i % 4).collect(), 4);
        let spec = NoiseSpec {
            kind: NoiseKind::AsymmetricMap,
            rate: 0.4,
            flip_map: Some(BTreeMap::from([(0, 1), (2, 3)])),
            seed: 17,
            ..NoiseSpec::none()
        };
        let a = apply_noise(&ds, &spec).unwrap();
        let b = apply_noise(&ds, &spec).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn mask_classes_partitions_and_remaps() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let ds = toy(labels, 10);
        let (kept, held) = mask_classes(&ds, &[6, 7, 8, 9]).unwrap();
        assert_eq!(kept.num_classes, 6);
        assert_eq!(kept.len() + held.len(), 100);
        assert!(kept.labels.iter().all(|&l| l < 6));
        assert!(held.labels.iter().all(|&l| l >= 6));
        assert_eq!(held.num_classes, 10);
    }

    #[test]
    fn mask_classes_remap_is_order_preserving_bijection() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let ds = toy(labels, 6);
        let (kept, _) = mask_classes(&ds, &[0, 3]).unwrap();
        // Column 0 of the toy features carries the original label.
        let mut pairs: Vec<(usize, usize)> = (0..kept.len())
            .map(|i| (kept.features.row(i)[0] as usize, kept.labels[i]))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs, vec![(1, 0), (2, 1), (4, 2), (5, 3)]);
    }

    #[test]
    fn mask_empty_removed_set_keeps_everything() {
        let ds = toy(vec![0, 1, 2, 1], 3);
        let (kept, held) = mask_classes(&ds, &[]).unwrap();
        assert_eq!(kept.len(), 4);
        assert_eq!(held.len(), 0);
        assert_eq!(kept.labels, ds.labels);
    }

    #[test]
    fn mask_all_classes_rejected() {
        let ds = toy(vec![0, 1], 2);
        assert!(mask_classes(&ds, &[0, 1]).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_then_remainder() {
        let ds = toy((0..1000).map(|i| i % 4).collect(), 4);
        let (tr, va, te) = split(&ds, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (800, 100, 100));
    }

    #[test]
    fn split_everything_to_train() {
        let ds = toy(vec![0, 1, 0, 1], 2);
        let (tr, va, te) = split(&ds, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (4, 0, 0));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy((0..200).map(|i| i % 3).collect(), 3);
        let a = split(&ds, [0.6, 0.2, 0.2], 7).unwrap();
        let b = split(&ds, [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!(a.0.labels, b.0.labels);
        assert_eq!(a.2.labels, b.2.labels);
        assert_eq!(a.0.features, b.0.features);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = toy(vec![0, 1], 2);
        assert!(split(&ds, [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut ds = toy(vec![0, 1, 2, 1], 3);
        ds.clean_labels = Some(vec![0, 1, 2, 2]);
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(std::io::BufReader::new(&buf[..]), Some(3)).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.clean_labels, ds.clean_labels);
        assert_eq!(back.features, ds.features);
    }

    #[test]
    fn subsample_is_deterministic_and_bounded() {
        let ds = toy((0..100).map(|i| i % 5).collect(), 5);
        let a = ds.subsample(30, 9);
        let b = ds.subsample(30, 9);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 30);
        assert_eq!(ds.subsample(500, 9).len(), 100);
    }

    proptest! {
        #[test]
        fn split_partitions_every_sample(n in 3usize..120, seed in 0u64..1000) {
            let ds = toy((0..n).map(|i| i % 3).collect(), 3);
            let (tr, va, te) = split(&ds, [0.5, 0.25, 0.25], seed).unwrap();
            prop_assert_eq!(tr.len() + va.len() + te.len(), n);
            let mut seen: Vec<f64> = tr.features.data().iter()
                .chain(va.features.data())
                .chain(te.features.data())
                .copied()
                .collect();
            let mut orig: Vec<f64> = ds.features.data().to_vec();
            seen.sort_by(f64::total_cmp);
            orig.sort_by(f64::total_cmp);
            prop_assert_eq!(seen, orig);
        }

        #[test]
        fn noise_preserves_sample_count_under_relabel(seed in 0u64..500) {
            let ds = toy((0..200).map(|i| i % 10).collect(), 10);
            let spec = NoiseSpec {
                kind: NoiseKind::RelabelToRange,
                rate: 1.0,
                source_classes: Some(vec![7, 8, 9]),
                target_range: Some((0..7).collect()),
                seed,
                ..NoiseSpec::none()
            };
            let noisy = apply_noise(&ds, &spec).unwrap();
            let c = counts(&noisy.labels, 10);
            prop_assert_eq!(c[7] + c[8] + c[9], 0);
            prop_assert_eq!(noisy.len(), ds.len());
        }
    }
}
