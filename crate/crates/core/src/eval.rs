//! Multi-label and single-label metrics, plus a seeded k-fold splitter.
//!
//! Conventions: an example whose predicted and gold sets are both empty has
//! Jaccard 1; any F1 whose precision and recall are both undefined or zero
//! is 0; macro-F1 averages over every label in the space, including labels
//! absent from the evaluated split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions but {golds} gold rows")]
    Length { preds: usize, golds: usize },
    #[error("row {row} has width {got}, expected {expected}")]
    Width { row: usize, expected: usize, got: usize },
    #[error("no examples")]
    Empty,
    #[error("k-fold needs 2 <= k <= n, got k = {k}, n = {n}")]
    Folds { k: usize, n: usize },
    #[error("index {0} is not among the kept labels")]
    NotKept(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn precision(self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    fn recall(self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check<P: AsRef<[bool]>, G: AsRef<[bool]>>(preds: &[P], golds: &[G]) -> Result<usize, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::Length { preds: preds.len(), golds: golds.len() });
    }
    let width = golds.first().map_or(0, |g| g.as_ref().len());
    for (row, (p, g)) in preds.iter().zip(golds).enumerate() {
        for got in [p.as_ref().len(), g.as_ref().len()] {
            if got != width {
                return Err(EvalError::Width { row, expected: width, got });
            }
        }
    }
    Ok(width)
}

fn class_counts<P: AsRef<[bool]>, G: AsRef<[bool]>>(preds: &[P], golds: &[G], width: usize) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); width];
    for (p, g) in preds.iter().zip(golds) {
        for (c, (&pi, &gi)) in counts.iter_mut().zip(p.as_ref().iter().zip(g.as_ref())) {
            match (pi, gi) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

pub fn jaccard_accuracy<P: AsRef<[bool]>, G: AsRef<[bool]>>(preds: &[P], golds: &[G]) -> Result<f64, EvalError> {
    check(preds, golds)?;
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&a, &b) in p.as_ref().iter().zip(g.as_ref()) {
                inter += usize::from(a && b);
                union += usize::from(a || b);
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    Ok(total / preds.len() as f64)
}

pub fn micro_f1<P: AsRef<[bool]>, G: AsRef<[bool]>>(preds: &[P], golds: &[G]) -> Result<f64, EvalError> {
    let width = check(preds, golds)?;
    let pooled = class_counts(preds, golds, width).into_iter().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    Ok(pooled.f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold positives.
    pub support: usize,
}

/// Macro-F1 over all `labels.len()` classes, with the per-class breakdown.
pub fn macro_f1<P: AsRef<[bool]>, G: AsRef<[bool]>>(
    preds: &[P],
    golds: &[G],
    labels: &[String],
) -> Result<(f64, Vec<ClassScore>), EvalError> {
    let width = check(preds, golds)?;
    let width = if preds.is_empty() { labels.len() } else { width };
    if width != labels.len() {
        return Err(EvalError::Width { row: 0, expected: labels.len(), got: width });
    }
    let per_class: Vec<ClassScore> = class_counts(preds, golds, width)
        .into_iter()
        .zip(labels)
        .map(|(c, label)| ClassScore {
            label: label.clone(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            support: c.tp + c.fn_,
        })
        .collect();
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok((mean, per_class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub jaccard_accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub n_examples: usize,
}

impl EvalReport {
    pub fn compute<P: AsRef<[bool]>, G: AsRef<[bool]>>(
        preds: &[P],
        golds: &[G],
        labels: &[String],
    ) -> Result<Self, EvalError> {
        let jaccard_accuracy = jaccard_accuracy(preds, golds)?;
        let micro_f1 = micro_f1(preds, golds)?;
        let (macro_f1, per_class) = macro_f1(preds, golds, labels)?;
        Ok(Self { jaccard_accuracy, micro_f1, macro_f1, per_class, n_examples: preds.len() })
    }

    pub fn to_table(&self) -> String {
        let width = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(9);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "label", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>10}  {:>9}  {:>9}", "Accuracy", "Micro-F1", "Macro-F1");
        let _ = writeln!(out, "{:>10.4}  {:>9.4}  {:>9.4}", self.jaccard_accuracy, self.micro_f1, self.macro_f1);
        let _ = writeln!(out, "({} examples)", self.n_examples);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLabelClass {
    pub label: String,
    pub f1: f64,
    pub support: usize,
    pub low_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLabelReport {
    pub accuracy: f64,
    /// Mean F1 over the classes that are not flagged as low-support.
    pub average_f1: f64,
    pub per_class: Vec<SingleLabelClass>,
    pub min_support: usize,
    pub n_examples: usize,
}

/// Exact-match accuracy and one-vs-rest F1 over `kept` label indices.
/// `labels` names the full space that the indices refer to.
pub fn single_label_report(
    preds: &[usize],
    golds: &[usize],
    kept: &[usize],
    labels: &[String],
    min_support: usize,
) -> Result<SingleLabelReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::Length { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&bad) = preds.iter().chain(golds).find(|i| !kept.contains(i)) {
        return Err(EvalError::NotKept(bad));
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let per_class: Vec<SingleLabelClass> = kept
        .iter()
        .map(|&k| {
            let mut c = Counts::default();
            for (&p, &g) in preds.iter().zip(golds) {
                match (p == k, g == k) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
            let support = c.tp + c.fn_;
            SingleLabelClass {
                label: labels.get(k).cloned().unwrap_or_else(|| k.to_string()),
                f1: c.f1(),
                support,
                low_support: support < min_support,
            }
        })
        .collect();
    let reported: Vec<f64> = per_class.iter().filter(|c| !c.low_support).map(|c| c.f1).collect();
    let average_f1 =
        if reported.is_empty() { 0.0 } else { reported.iter().sum::<f64>() / reported.len() as f64 };
    Ok(SingleLabelReport {
        accuracy: correct as f64 / preds.len() as f64,
        average_f1,
        per_class,
        min_support,
        n_examples: preds.len(),
    })
}

impl SingleLabelReport {
    /// One header row of class names, one row of F1 scores, then average F1
    /// and accuracy. Low-support classes print `-`.
    pub fn to_table(&self) -> String {
        let mut header = String::from("F1 score ");
        let mut row = String::from("         ");
        for c in &self.per_class {
            let w = c.label.len().max(6);
            let _ = write!(header, " | {:>w$}", c.label);
            if c.low_support {
                let _ = write!(row, " | {:>w$}", "-");
            } else {
                let _ = write!(row, " | {:>w$.1}", 100.0 * c.f1);
            }
        }
        let _ = write!(header, " | {:>10} | {:>8}", "Average F1", "Accuracy");
        let _ = write!(row, " | {:>10.1} | {:>8.1}", 100.0 * self.average_f1, 100.0 * self.accuracy);
        let mut out = format!("{header}\n{row}\n");
        let flagged: Vec<&str> = self.per_class.iter().filter(|c| c.low_support).map(|c| c.label.as_str()).collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "not reported (support < {}): {}", self.min_support, flagged.join(", "));
        }
        out
    }
}

/// Train and test indices of one fold.
pub type Fold = (Vec<usize>, Vec<usize>);

/// `(train, test)` index pairs. Indices are shuffled with the seed, then
/// cut into `k` contiguous folds whose sizes differ by at most one (the
/// first `n % k` folds are one larger).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::Folds { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test = order[start..start + size].to_vec();
        let train = order[..start].iter().chain(&order[start + size..]).copied().collect();
        folds.push((train, test));
        start += size;
    }
    Ok(folds)
}
