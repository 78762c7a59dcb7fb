use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// `confusion[true][pred]`.
    Multiclass,
    /// `confusion[class] = [tp, fp, fn, tn]`.
    Multilabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub kind: ReportKind,
    pub n_samples: usize,
    pub per_class: Vec<ClassMetrics>,
    pub weighted: Aggregate,
    pub micro: Aggregate,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics from per-class `(tp, fp, fn)` counts; support is `tp + fn`.
fn from_counts(labels: &[&str], counts: &[(usize, usize, usize)]) -> (Vec<ClassMetrics>, Aggregate, Aggregate) {
    let per_class: Vec<ClassMetrics> = labels
        .iter()
        .zip(counts)
        .map(|(l, &(tp, fp, fn_))| {
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                label: (*l).to_string(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: tp + fn_,
            }
        })
        .collect();
    let total: usize = per_class.iter().map(|c| c.support).sum();
    let wmean = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted = Aggregate {
        precision: wmean(|c| c.precision),
        recall: wmean(|c| c.recall),
        f1: wmean(|c| c.f1),
    };
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let micro = Aggregate {
        precision: p,
        recall: r,
        f1: f1(p, r),
    };
    (per_class, weighted, micro)
}

/// Single-label multiclass report over classes `0..labels.len()`.
pub fn classification_report(preds: &[usize], truth: &[usize], labels: &[&str]) -> Result<ClassificationReport> {
    if preds.len() != truth.len() {
        return Err(Error::Usage(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    if preds.is_empty() {
        return Err(Error::Usage("classification report of no samples".into()));
    }
    let c = labels.len();
    if let Some(bad) = preds.iter().chain(truth).find(|&&x| x >= c) {
        return Err(Error::Usage(format!("class {bad} out of range for {c} classes")));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &t) in preds.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let counts: Vec<(usize, usize, usize)> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let fp = (0..c).map(|t| confusion[t][k]).sum::<usize>() - tp;
            let fn_ = confusion[k].iter().sum::<usize>() - tp;
            (tp, fp, fn_)
        })
        .collect();
    let (per_class, weighted, micro) = from_counts(labels, &counts);
    Ok(ClassificationReport {
        kind: ReportKind::Multiclass,
        n_samples: preds.len(),
        per_class,
        weighted,
        micro,
        confusion,
    })
}

/// Multi-label report: one binary problem per class, weighted by positive
/// support, micro from pooled counts.
pub fn multilabel_report(preds: &[Vec<bool>], truth: &[Vec<bool>], labels: &[&str]) -> Result<ClassificationReport> {
    if preds.len() != truth.len() {
        return Err(Error::Usage(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    if preds.is_empty() {
        return Err(Error::Usage("classification report of no samples".into()));
    }
    let c = labels.len();
    if preds.iter().chain(truth).any(|r| r.len() != c) {
        return Err(Error::Usage(format!("multi-label rows must have {c} entries")));
    }
    let mut confusion = vec![vec![0usize; 4]; c];
    for (p, t) in preds.iter().zip(truth) {
        for k in 0..c {
            let slot = match (p[k], t[k]) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            confusion[k][slot] += 1;
        }
    }
    let counts: Vec<(usize, usize, usize)> = confusion.iter().map(|r| (r[0], r[1], r[2])).collect();
    let (per_class, weighted, micro) = from_counts(labels, &counts);
    Ok(ClassificationReport {
        kind: ReportKind::Multilabel,
        n_samples: preds.len(),
        per_class,
        weighted,
        micro,
        confusion,
    })
}
