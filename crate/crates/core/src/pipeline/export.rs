//! Plot-ready exports: metrics JSON, PR curves and routing heatmaps.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{micro_pr_curve, pr_curve, Aggregate, ClassMetrics, ClassificationReport, PrPoint};
use crate::text::Aspect;

/// Label of the pooled curve in PR exports.
pub const MICRO_LABEL: &str = "micro";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub class: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One-vs-rest curves per class plus the micro curve. Classes without a
/// positive example have no curve and are skipped.
pub fn pr_curves(scores: &Tensor, positive: &[Vec<bool>], labels: &[&str]) -> Result<Vec<(String, Vec<PrPoint>)>> {
    if labels.len() != scores.cols() || positive.len() != scores.rows() {
        return Err(Error::dim("pr_curves", scores.shape(), (positive.len(), labels.len())));
    }
    let mut out = Vec::new();
    for (c, label) in labels.iter().enumerate() {
        let pos: Vec<bool> = positive.iter().map(|r| r[c]).collect();
        if !pos.contains(&true) {
            continue;
        }
        let col: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, c)).collect();
        out.push((label.to_string(), pr_curve(&col, &pos)?));
    }
    if positive.iter().flatten().any(|&p| p) {
        out.push((MICRO_LABEL.to_string(), micro_pr_curve(scores, positive)?));
    }
    Ok(out)
}

/// Positive masks of single-label truth.
pub fn one_vs_rest(truth: &[usize], classes: usize) -> Vec<Vec<bool>> {
    truth.iter().map(|&t| (0..classes).map(|c| c == t).collect()).collect()
}

/// `class,threshold,precision,recall` rows.
pub fn write_pr_csv<W: Write>(curves: &[(String, Vec<PrPoint>)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (class, points) in curves {
        for p in points {
            wr.serialize(PrRow {
                class: class.clone(),
                threshold: p.threshold,
                precision: p.precision,
                recall: p.recall,
            })?;
        }
    }
    wr.flush().map_err(|e| Error::io("<pr csv>", e))
}

pub fn read_pr_csv<R: Read>(r: R) -> Result<Vec<PrRow>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<Vec<PrRow>, _>>()?)
}

/// Header of aspect names, then one row per expert.
pub fn write_heatmap_csv<W: Write>(heatmap: &[Vec<f64>], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(Aspect::ALL.iter().map(|a| a.name()))?;
    for row in heatmap {
        if row.len() != Aspect::COUNT {
            return Err(Error::Usage(format!("heatmap rows need {} entries", Aspect::COUNT)));
        }
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush().map_err(|e| Error::io("<heatmap csv>", e))
}

pub fn read_heatmap_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let want: Vec<&str> = Aspect::ALL.iter().map(|a| a.name()).collect();
    if header != want {
        return Err(Error::Schema(format!("heatmap header {header:?}, want {want:?}")));
    }
    rd.records()
        .map(|rec| {
            rec?.iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Schema(format!("heatmap value {v:?}: {e}"))))
                .collect()
        })
        .collect()
}

/// Utilization diagnostics attached to an ABSA evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cov2Summary {
    pub cov2_soft: f64,
    pub cov2_hard: f64,
    pub cov2_soft_window: f64,
    pub cov2_hard_window: f64,
}

/// Metrics document: per-class metrics keyed by label, aggregates,
/// confusion counts and optional COV² fields, alongside the seed and
/// config that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub seed: u64,
    pub stage: String,
    pub n_samples: usize,
    pub per_class: serde_json::Map<String, serde_json::Value>,
    pub weighted: Aggregate,
    pub micro: Aggregate,
    pub confusion: Vec<Vec<usize>>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub cov2: Option<Cov2Summary>,
    pub config: serde_json::Value,
}

impl MetricsDocument {
    pub fn new(
        seed: u64,
        stage: &str,
        report: &ClassificationReport,
        cov2: Option<Cov2Summary>,
        config: serde_json::Value,
    ) -> Result<Self> {
        let mut per_class = serde_json::Map::new();
        for ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support,
        } in &report.per_class
        {
            per_class.insert(
                label.clone(),
                serde_json::json!({"precision": precision, "recall": recall, "f1": f1, "support": support}),
            );
        }
        Ok(Self {
            seed,
            stage: stage.to_string(),
            n_samples: report.n_samples,
            per_class,
            weighted: report.weighted,
            micro: report.micro,
            confusion: report.confusion.clone(),
            cov2,
            config,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
