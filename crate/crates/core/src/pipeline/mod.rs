//! The three training stages, evaluation and checkpoints.

mod absa;
mod acd;
mod checkpoint;
mod config;
mod data;
mod export;
mod sentiment;
mod train;

pub use absa::{
    evaluate_absa, evaluate_features, load_balance_stress, predict_pair, train_absa, AbsaEpoch, AbsaEvaluation, AbsaModel, AbsaReport,
    GateSkew, TrainOptions, COV2_WINDOW, SENTIMENT_LABELS, STRESS_RECORDS,
};
pub use acd::{aspect_labels, aspect_targets, evaluate_acd, train_acd, AcdEvaluation, AcdModel};
pub use checkpoint::{fnv1a64, Checkpoint, StageModel, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::{Stage, StageConfig, DEFAULT_MANUAL_BUDGET, DEFAULT_PSEUDO_THRESHOLD, DEFAULT_SEED};
pub use data::{expand_triples, gate_dim, one_hot, rms_normalize, sequential_batches, shuffled_batches, stack_rows, AbsaFeatures, Triple};
pub use export::{
    one_vs_rest, pr_curves, read_heatmap_csv, read_pr_csv, write_heatmap_csv, write_pr_csv, Cov2Summary, MetricsDocument,
    PrRow, MICRO_LABEL,
};
pub use sentiment::{
    evaluate_sentiment, pseudo_label, train_sentiment, PseudoLabel, PseudoLabels, SentimentEvaluation, SentimentModel,
};
pub use train::{EpochReport, HeadReport, RngState, Trained};
