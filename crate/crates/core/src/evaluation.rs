//! Chunk-level and file-level scoring of pseudo-labels against withheld truth.
//!
//! File-level predictions are the majority vote of a file's chunk
//! predictions. Unassigned chunks abstain; ties go to the smallest class
//! index. An unassigned prediction (at either level) counts as the "Others"
//! class when one is supplied and is simply wrong otherwise.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Chunk,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes with support.
    #[default]
    Macro,
    /// Support-weighted mean.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub others_class: Option<usize>,
    pub averaging: Averaging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub averaging: Averaging,
    pub n_evaluated: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn score(
    pred: &[Option<usize>],
    truth: &[usize],
    classes: &[String],
    opts: EvalOptions,
    granularity: Granularity,
) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Param(format!(
            "{} predictions for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Param("nothing to evaluate: the eval set is empty".into()));
    }
    let c = classes.len();
    if let Some(j) = truth.iter().chain(pred.iter().flatten()).find(|&&j| j >= c) {
        return Err(Error::Param(format!("class index {j} out of range for {c} classes")));
    }
    let mut tp = vec![0usize; c];
    let mut predicted = vec![0usize; c];
    let mut support = vec![0usize; c];
    let mut correct = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        support[t] += 1;
        if let Some(p) = p.or(opts.others_class) {
            predicted[p] += 1;
            if p == t {
                tp[p] += 1;
                correct += 1;
            }
        }
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|j| {
            let precision = if predicted[j] > 0 { tp[j] as f64 / predicted[j] as f64 } else { 0.0 };
            let recall = if support[j] > 0 { tp[j] as f64 / support[j] as f64 } else { 0.0 };
            ClassMetrics { class: classes[j].clone(), precision, recall, f1: f1(precision, recall), support: support[j] }
        })
        .collect();

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let weight = |m: &ClassMetrics| match opts.averaging {
        Averaging::Macro => 1.0,
        Averaging::Weighted => m.support as f64,
    };
    let total_weight: f64 = present.iter().map(|m| weight(m)).sum();
    let avg = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| weight(m) * f(m)).sum::<f64>() / total_weight;

    Ok(EvalReport {
        granularity,
        averaging: opts.averaging,
        n_evaluated: truth.len(),
        accuracy: correct as f64 / truth.len() as f64,
        macro_precision: avg(|m| m.precision),
        macro_recall: avg(|m| m.recall),
        macro_f1: avg(|m| m.f1),
        per_class,
    })
}

/// Per-item metrics.
pub fn chunk_metrics(
    pred: &[Option<usize>],
    truth: &[usize],
    classes: &[String],
    opts: EvalOptions,
) -> Result<EvalReport> {
    score(pred, truth, classes, opts, Granularity::Chunk)
}

/// Majority vote of assigned chunk labels; `None` when every chunk abstains.
pub fn majority_vote(votes: impl IntoIterator<Item = Option<usize>>) -> Option<usize> {
    let mut counts: Vec<usize> = Vec::new();
    for v in votes.into_iter().flatten() {
        if counts.len() <= v {
            counts.resize(v + 1, 0);
        }
        counts[v] += 1;
    }
    let mut best: Option<usize> = None;
    for (j, &n) in counts.iter().enumerate() {
        if n > 0 && best.is_none_or(|b| n > counts[b]) {
            best = Some(j);
        }
    }
    best
}

/// Per-file metrics. Files appear in order of their first chunk.
pub fn file_metrics(
    pred: &[Option<usize>],
    truth: &[usize],
    file_ids: &[&str],
    classes: &[String],
    opts: EvalOptions,
) -> Result<EvalReport> {
    if pred.len() != truth.len() || file_ids.len() != truth.len() {
        return Err(Error::Param("predictions, truth and file ids differ in length".into()));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut files: Vec<(&str, usize, Vec<Option<usize>>)> = Vec::new();
    for ((&p, &t), &f) in pred.iter().zip(truth).zip(file_ids) {
        let k = *index.entry(f).or_insert_with(|| {
            files.push((f, t, Vec::new()));
            files.len() - 1
        });
        if files[k].1 != t {
            return Err(Error::Data(format!("file {f:?} has chunks with different true labels")));
        }
        files[k].2.push(p);
    }
    let file_pred: Vec<Option<usize>> = files.iter().map(|(_, _, v)| majority_vote(v.iter().copied())).collect();
    let file_truth: Vec<usize> = files.iter().map(|(_, t, _)| *t).collect();
    score(&file_pred, &file_truth, classes, opts, Granularity::File)
}

/// Scores the manifest's eval items at both granularities.
///
/// `pred` covers every item of the manifest; only eval-role items are scored.
pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    pred: &[Option<usize>],
    averaging: Averaging,
) -> Result<(EvalReport, EvalReport)> {
    if pred.len() != manifest.len() {
        return Err(Error::Param(format!("{} predictions for {} items", pred.len(), manifest.len())));
    }
    let idx = manifest.eval_indices();
    let items = manifest.items();
    let p: Vec<Option<usize>> = idx.iter().map(|&i| pred[i]).collect();
    let t: Vec<usize> = idx.iter().map(|&i| items[i].label.expect("eval items carry labels")).collect();
    let f: Vec<&str> = idx.iter().map(|&i| items[i].file_id.as_str()).collect();
    let opts = EvalOptions { others_class: manifest.others_class(), averaging };
    Ok((
        chunk_metrics(&p, &t, manifest.classes(), opts)?,
        file_metrics(&p, &t, &f, manifest.classes(), opts)?,
    ))
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self, per_class: bool) -> String {
        let (level, unit) = match self.granularity {
            Granularity::Chunk => ("chunk", "chunks"),
            Granularity::File => ("file", "files"),
        };
        let avg = match self.averaging {
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        };
        let mut s = String::new();
        let _ = writeln!(s, "{level}-level evaluation ({} {unit}, {avg} averaging)", self.n_evaluated);
        let _ = writeln!(s, "  accuracy   {:.4}", self.accuracy);
        let _ = writeln!(s, "  precision  {:.4}", self.macro_precision);
        let _ = writeln!(s, "  recall     {:.4}", self.macro_recall);
        let _ = writeln!(s, "  f1         {:.4}", self.macro_f1);
        if per_class {
            let width = self.per_class.iter().map(|m| m.class.len()).max().unwrap_or(5).max(5);
            let _ = writeln!(s, "  {:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support");
            for m in &self.per_class {
                let _ = writeln!(
                    s,
                    "  {:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                    m.class, m.precision, m.recall, m.f1, m.support
                );
            }
        }
        s
    }
}
