use serde::{Deserialize, Serialize};

use super::dispatch::RoutingPlan;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilizationMode {
    /// Mean gate probability per expert.
    Soft,
    /// Occupied slots per expert over all occupied slots.
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationVector {
    pub u: Vec<f64>,
    pub mode: UtilizationMode,
}

/// Column means of the gate probabilities over every token of every batch.
pub fn soft_utilization(probs: &[&Tensor]) -> Result<UtilizationVector> {
    let e = probs.first().map(|p| p.cols()).ok_or_else(|| Error::Usage("utilization window is empty".into()))?;
    let mut sum = vec![0.0; e];
    let mut n = 0usize;
    for p in probs {
        if p.cols() != e {
            return Err(Error::dim("soft_utilization", p.shape(), (p.rows(), e)));
        }
        for r in 0..p.rows() {
            for (s, v) in sum.iter_mut().zip(p.row_slice(r)) {
                *s += v;
            }
        }
        n += p.rows();
    }
    if n == 0 {
        return Err(Error::Degenerate("no tokens in utilization window".into()));
    }
    Ok(UtilizationVector {
        u: sum.into_iter().map(|s| s / n as f64).collect(),
        mode: UtilizationMode::Soft,
    })
}

/// Normalized slot occupancy summed over the plans.
pub fn hard_utilization(plans: &[&RoutingPlan]) -> Result<UtilizationVector> {
    let e = plans.first().map(|p| p.n_experts).ok_or_else(|| Error::Usage("utilization window is empty".into()))?;
    let mut counts = vec![0usize; e];
    for p in plans {
        for (c, o) in counts.iter_mut().zip(p.occupancy()) {
            *c += o;
        }
    }
    normalize_counts(&counts)
}

/// Counts scaled to sum to one.
pub fn normalize_counts(counts: &[usize]) -> Result<UtilizationVector> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("no occupied slots".into()));
    }
    Ok(UtilizationVector {
        u: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        mode: UtilizationMode::Hard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::dispatch::hard_plan;

    #[test]
    fn uniform_probs() {
        let p = Tensor::filled(4, 6, 1.0 / 6.0);
        let u = soft_utilization(&[&p]).unwrap();
        assert!(u.u.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn hard_one_expert() {
        let plan = hard_plan(&[0, 0, 0], 6).unwrap();
        let u = hard_utilization(&[&plan]).unwrap();
        assert_eq!(u.u, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_window_rejected() {
        assert!(soft_utilization(&[]).is_err());
        assert!(normalize_counts(&[0, 0]).is_err());
    }
}
