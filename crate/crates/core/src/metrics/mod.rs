//! Training objectives, classification reports and precision-recall curves.

mod losses;
mod pr;
mod report;

pub use losses::{
    aux_importance, aux_importance_var, cce, cov2, mse_uniform, mse_uniform_var, total_loss, LossWeights,
    DEFAULT_LAMBDA,
};
pub use pr::{class_pr_curve, micro_pr_curve, pr_curve, PrPoint};
pub use report::{classification_report, multilabel_report, Aggregate, ClassMetrics, ClassificationReport, ReportKind};
