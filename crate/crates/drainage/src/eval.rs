//! Inference modes, accuracy/confusion metrics, drainage-response ranking,
//! and open-set scoring with ROC AUC.

use crate::data::LabeledDataset;
use crate::model::Model;
use crate::numerics::{open_drainage_probs, LogitVector};
use crate::{Error, Result};
use std::io::Write;

/// Outcome of open-drainage prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Class(usize),
    Drain,
}

/// Argmax over the class logits only; ties break toward the lowest index.
/// The drainage logit never enters.
pub fn predict_closed(z: &LogitVector) -> usize {
    let mut best = 0;
    for i in 1..z.num_classes() {
        if z.class(i) > z.class(best) {
            best = i;
        }
    }
    best
}

/// Argmax over all `C + 1` logits; a tie between drainage and a class breaks
/// toward the class.
pub fn predict_open(z: &LogitVector) -> Prediction {
    let best = predict_closed(z);
    if z.drainage() > z.class(best) {
        Prediction::Drain
    } else {
        Prediction::Class(best)
    }
}

/// Both-mode evaluation summary. `confusion_open` has `C + 1` rows (predicted
/// class, drainage last) by `C` columns (true class); open accuracy counts
/// DRAIN predictions as incorrect for labeled data.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub closed_accuracy: f64,
    pub open_accuracy: f64,
    pub confusion_open: Vec<Vec<u64>>,
    pub drainage_fraction_per_class: Vec<f64>,
    pub closed_accuracy_per_class: Vec<f64>,
    pub per_class_counts: Vec<u64>,
}

impl EvalReport {
    /// Writes the report as CSV blocks separated by blank lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "closed_accuracy,{}", self.closed_accuracy)?;
        writeln!(w, "open_accuracy,{}", self.open_accuracy)?;
        writeln!(w)?;

        let c = self.per_class_counts.len();
        let mut header = String::from("predicted");
        for t in 0..c {
            header.push_str(&format!(",true_{t}"));
        }
        writeln!(w, "{header}")?;
        for (r, row) in self.confusion_open.iter().enumerate() {
            let name = if r == c {
                "drain".to_string()
            } else {
                format!("class_{r}")
            };
            let mut line = name;
            for v in row {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}")?;
        }
        writeln!(w)?;

        writeln!(w, "class,count,drainage_fraction,closed_accuracy")?;
        for t in 0..c {
            writeln!(
                w,
                "{t},{},{},{}",
                self.per_class_counts[t],
                self.drainage_fraction_per_class[t],
                self.closed_accuracy_per_class[t]
            )?;
        }
        Ok(())
    }
}

/// Evaluates both prediction modes over a dataset, grouping by true label.
pub fn evaluate(model: &dyn Model, ds: &LabeledDataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    if ds.num_classes != model.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} classes, dataset {}",
            model.num_classes(),
            ds.num_classes
        )));
    }
    let c = ds.num_classes;
    let logits = model.forward_batch(&ds.features)?;

    let mut confusion = vec![vec![0u64; c]; c + 1];
    let mut counts = vec![0u64; c];
    let mut drained = vec![0u64; c];
    let mut closed_per_class = vec![0u64; c];
    let mut closed_hits = 0u64;
    let mut open_hits = 0u64;
    for (z, &label) in logits.iter().zip(&ds.labels) {
        counts[label] += 1;
        let closed = predict_closed(z);
        if closed == label {
            closed_hits += 1;
            closed_per_class[label] += 1;
        }
        match predict_open(z) {
            Prediction::Class(k) => {
                confusion[k][label] += 1;
                if k == label {
                    open_hits += 1;
                }
            }
            Prediction::Drain => {
                confusion[c][label] += 1;
                drained[label] += 1;
            }
        }
    }

    let n = ds.len() as f64;
    Ok(EvalReport {
        closed_accuracy: closed_hits as f64 / n,
        open_accuracy: open_hits as f64 / n,
        confusion_open: confusion,
        drainage_fraction_per_class: drained
            .iter()
            .zip(&counts)
            .map(|(&d, &t)| if t == 0 { 0.0 } else { d as f64 / t as f64 })
            .collect(),
        closed_accuracy_per_class: closed_per_class
            .iter()
            .zip(&counts)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        per_class_counts: counts,
    })
}

/// Per-sample open-drainage probability of the drainage node.
pub fn drainage_probs(model: &dyn Model, ds: &LabeledDataset) -> Result<Vec<f64>> {
    let logits = model.forward_batch(&ds.features)?;
    Ok(logits
        .iter()
        .map(|z| {
            let p = open_drainage_probs(z);
            p.get(p.len() - 1)
        })
        .collect())
}

/// Sample indices ordered by ascending drainage response p_d; ties keep
/// original order.
pub fn drainage_rank(model: &dyn Model, ds: &LabeledDataset) -> Result<Vec<usize>> {
    if ds.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot rank an empty dataset".into(),
        ));
    }
    let pd = drainage_probs(model, ds)?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.sort_by(|&a, &b| pd[a].total_cmp(&pd[b]).then(a.cmp(&b)));
    Ok(idx)
}

/// Writes the ranking as `index,p_d,label,clean_label`, one row per sample in
/// rank order.
pub fn write_rank_csv<W: Write>(model: &dyn Model, ds: &LabeledDataset, mut w: W) -> Result<()> {
    let pd = drainage_probs(model, ds)?;
    let order = drainage_rank(model, ds)?;
    writeln!(w, "index,p_d,label,clean_label")?;
    for i in order {
        let clean = ds.clean_labels.as_ref().map_or(ds.labels[i], |c| c[i]);
        writeln!(w, "{i},{},{},{clean}", pd[i], ds.labels[i])?;
    }
    Ok(())
}

/// Open-set scoring rules; higher score always means "more unknown".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRule {
    /// Negated maximum class probability under open drainage.
    Msp,
    /// The open-drainage probability of the drainage node.
    DrainProb,
}

impl ScoreRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ScoreRule::Msp),
            "p_d" => Ok(ScoreRule::DrainProb),
            other => Err(Error::Config(format!(
                "unknown scoring rule '{other}'; available: msp, p_d"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreRule::Msp => "msp",
            ScoreRule::DrainProb => "p_d",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoredSample {
    pub score: f64,
    pub is_known: bool,
}

/// Per-sample unknown-ness scores over a known and an unknown dataset.
#[derive(Debug, Clone)]
pub struct OsrScoredSet {
    pub samples: Vec<ScoredSample>,
}

fn score_of(z: &LogitVector, rule: ScoreRule) -> f64 {
    let p = open_drainage_probs(z);
    match rule {
        ScoreRule::Msp => {
            let best = (0..z.num_classes())
                .map(|i| p.get(i))
                .fold(f64::NEG_INFINITY, f64::max);
            -best
        }
        ScoreRule::DrainProb => p.get(p.len() - 1),
    }
}

/// Scores every sample of both datasets under the given rule.
pub fn osr_scores(
    model: &dyn Model,
    known: &LabeledDataset,
    unknown: &LabeledDataset,
    rule: ScoreRule,
) -> Result<OsrScoredSet> {
    let mut samples = Vec::with_capacity(known.len() + unknown.len());
    for z in model.forward_batch(&known.features)? {
        samples.push(ScoredSample {
            score: score_of(&z, rule),
            is_known: true,
        });
    }
    for z in model.forward_batch(&unknown.features)? {
        samples.push(ScoredSample {
            score: score_of(&z, rule),
            is_known: false,
        });
    }
    Ok(OsrScoredSet { samples })
}

/// Probability that a random unknown outscores a random known, ties counted
/// one half (the rank-sum formulation).
pub fn roc_auc(scored: &OsrScoredSet) -> Result<f64> {
    let n = scored.samples.len();
    let n_unknown = scored.samples.iter().filter(|s| !s.is_known).count();
    let n_known = n - n_unknown;
    if n_unknown == 0 || n_known == 0 {
        return Err(Error::MetricUndefined(
            "ROC AUC needs at least one known and one unknown sample".into(),
        ));
    }
    if scored.samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::MetricUndefined("scores must be finite".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scored.samples[a].score.total_cmp(&scored.samples[b].score));

    // Average ranks over tie groups (1-based).
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scored.samples[order[j]].score == scored.samples[order[i]].score {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }

    let rank_sum: f64 = scored
        .samples
        .iter()
        .zip(&ranks)
        .filter(|(s, _)| !s.is_known)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum - (n_unknown * (n_unknown + 1)) as f64 / 2.0;
    Ok(u / (n_unknown as f64 * n_known as f64))
}
