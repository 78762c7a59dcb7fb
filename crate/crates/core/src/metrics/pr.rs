use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Operating point predicting positive for `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, thresholds descending, so recall is
/// nondecreasing along the curve.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<PrPoint>> {
    if scores.len() != positive.len() {
        return Err(Error::Usage(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Usage("pr_curve needs finite scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::Degenerate("pr_curve needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if positive[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// One-vs-rest curve of class `class` from an `N x C` score matrix.
pub fn class_pr_curve(scores: &Tensor, truth: &[usize], class: usize) -> Result<Vec<PrPoint>> {
    let col: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, class)).collect();
    let pos: Vec<bool> = truth.iter().map(|&t| t == class).collect();
    pr_curve(&col, &pos)
}

/// Micro-average curve: every (sample, class) score pooled into one binary
/// problem.
pub fn micro_pr_curve(scores: &Tensor, positive: &[Vec<bool>]) -> Result<Vec<PrPoint>> {
    if positive.len() != scores.rows() || positive.iter().any(|r| r.len() != scores.cols()) {
        return Err(Error::dim("micro_pr_curve", scores.shape(), (positive.len(), scores.cols())));
    }
    let flat: Vec<bool> = positive.iter().flatten().copied().collect();
    pr_curve(scores.data(), &flat)
}
