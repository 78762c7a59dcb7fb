//! Stage 1: overall review sentiment and confidence-based pseudo-labeling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::absa::{argmax, SENTIMENT_LABELS};
use super::config::{Stage, StageConfig};
use super::data::{one_hot, rms_normalize, sequential_batches, shuffled_batches, stack_rows};
use super::train::{EpochReport, HeadReport, Optimizer, Trained};
use crate::autodiff::{softmax_rows, Graph, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, ClassificationReport};
use crate::moe::N_CLASSES;
use crate::nn::{collect_grads, push_linear, Linear, Parameterized};
use crate::text::{EmbeddingProvider, ReviewRecord, Sentiment};

/// Linear softmax classifier over sentence embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentModel {
    pub head: Linear,
}

impl Parameterized for SentimentModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        push_linear(&mut v, "head", &self.head);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.head.tensors_mut().into_iter().collect()
    }
}

impl SentimentModel {
    pub fn input_dim(&self) -> usize {
        self.head.inputs()
    }

    /// Class probabilities, one row per input row.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.head.apply(x)?))
    }

    pub fn predict_records(&self, records: &[ReviewRecord], provider: &EmbeddingProvider) -> Result<Tensor> {
        let rows = sentence_rows(records, provider)?;
        let idx: Vec<usize> = (0..rows.len()).collect();
        if idx.is_empty() {
            return Ok(Tensor::zeros(0, N_CLASSES));
        }
        self.predict(&stack_rows(&rows, &idx)?)
    }
}

fn sentence_rows(records: &[ReviewRecord], provider: &EmbeddingProvider) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| provider.embed(&r.id, &r.text).map(rms_normalize))
        .collect()
}

/// Embeddings and labels of the records that carry an overall sentiment.
fn labeled(records: &[ReviewRecord], provider: &EmbeddingProvider) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let kept: Vec<&ReviewRecord> = records.iter().filter(|r| r.overall_sentiment.is_some()).collect();
    let mut x = Vec::with_capacity(kept.len());
    let mut y = Vec::with_capacity(kept.len());
    for r in kept {
        x.push(rms_normalize(provider.embed(&r.id, &r.text)?));
        y.push(r.overall_sentiment.expect("filtered").index());
    }
    Ok((x, y))
}

pub fn train_sentiment(
    split: &crate::text::DatasetSplit,
    config: &StageConfig,
    provider: &EmbeddingProvider,
) -> Result<Trained<SentimentModel, HeadReport>> {
    if config.stage != Stage::Sentiment {
        return Err(Error::Usage(format!("train_sentiment given a {} config", config.stage)));
    }
    config.validate()?;
    let (train_x, train_y) = labeled(&split.train, provider)?;
    let (val_x, val_y) = labeled(&split.validation, provider)?;
    if train_y.is_empty() || val_y.is_empty() {
        return Err(Error::Usage("sentiment training needs records with an overall sentiment".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SentimentModel {
        head: Linear::init(provider.dim(), N_CLASSES, &mut rng),
    };
    let mut opt = Optimizer::new(&model, config.learning_rate);
    let mut report = HeadReport {
        train_examples: train_y.len(),
        steps: 0,
        epochs: Vec::new(),
    };
    for epoch in 1..=config.epochs {
        let batches = shuffled_batches(train_y.len(), config.batch_size, &mut rng);
        let n_batches = batches.len();
        let mut loss_sum = 0.0;
        for idx in batches {
            let mut g = Graph::new();
            let mut order = Vec::new();
            let head = model.head.bind(&mut g, &mut order);
            let x = g.constant(stack_rows(&train_x, &idx)?);
            let logits = head.forward(&mut g, x)?;
            let probs = g.softmax_rows(logits);
            let labels: Vec<usize> = idx.iter().map(|&i| train_y[i]).collect();
            let t = g.constant(one_hot(&labels, N_CLASSES));
            let loss = g.cross_entropy(probs, t)?;
            g.backward(loss)?;
            opt.step(&mut model, &collect_grads(&g, &order))?;
            loss_sum += g.value(loss).item();
            report.steps += 1;
        }
        report.epochs.push(EpochReport {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            validation: evaluate_rows(&model, &val_x, &val_y, config.batch_size)?.0,
        });
    }
    Ok(Trained { model, report, rng })
}

fn evaluate_rows(
    model: &SentimentModel,
    x: &[Vec<f64>],
    y: &[usize],
    batch_size: usize,
) -> Result<(ClassificationReport, Tensor)> {
    let mut rows = Vec::with_capacity(y.len() * N_CLASSES);
    let mut preds = Vec::with_capacity(y.len());
    for idx in sequential_batches(y.len(), batch_size) {
        let p = model.predict(&stack_rows(x, &idx)?)?;
        for r in 0..p.rows() {
            preds.push(argmax(p.row_slice(r)));
            rows.extend_from_slice(p.row_slice(r));
        }
    }
    Ok((
        classification_report(&preds, y, &SENTIMENT_LABELS)?,
        Tensor::new(y.len(), N_CLASSES, rows)?,
    ))
}

/// Validation-style evaluation on labeled records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentEvaluation {
    pub report: ClassificationReport,
    pub probs: Tensor,
    pub labels: Vec<usize>,
}

pub fn evaluate_sentiment(
    model: &SentimentModel,
    records: &[ReviewRecord],
    provider: &EmbeddingProvider,
    batch_size: usize,
) -> Result<SentimentEvaluation> {
    let (x, y) = labeled(records, provider)?;
    if y.is_empty() {
        return Err(Error::Usage("evaluation set has no overall sentiment labels".into()));
    }
    let (report, probs) = evaluate_rows(model, &x, &y, batch_size)?;
    Ok(SentimentEvaluation { report, probs, labels: y })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    /// Position in the unlabeled input.
    pub index: usize,
    pub id: String,
    pub sentiment: Sentiment,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub auto_labeled: Vec<PseudoLabel>,
    pub flagged_for_review: Vec<PseudoLabel>,
}

/// Splits predictions whose top probability reaches `threshold`: the
/// `manual_budget` most confident go to review, the rest are accepted.
/// Ties in confidence keep input order.
pub fn pseudo_label(
    model: &SentimentModel,
    unlabeled: &[ReviewRecord],
    provider: &EmbeddingProvider,
    threshold: f64,
    manual_budget: usize,
) -> Result<PseudoLabels> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(Error::Usage(format!("threshold must be in (0.5, 1], got {threshold}")));
    }
    let probs = model.predict_records(unlabeled, provider)?;
    let mut confident: Vec<PseudoLabel> = (0..probs.rows())
        .filter_map(|i| {
            let row = probs.row_slice(i);
            let c = argmax(row);
            (row[c] >= threshold).then(|| PseudoLabel {
                index: i,
                id: unlabeled[i].id.clone(),
                sentiment: Sentiment::from_index(c).expect("three classes"),
                confidence: row[c],
            })
        })
        .collect();
    confident.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.index.cmp(&b.index)));
    let auto_labeled = confident.split_off(manual_budget.min(confident.len()));
    Ok(PseudoLabels {
        auto_labeled,
        flagged_for_review: confident,
    })
}
