//! Stage 2: multi-label aspect category detection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Stage, StageConfig};
use super::data::{rms_normalize, sequential_batches, shuffled_batches, stack_rows};
use super::train::{EpochReport, HeadReport, Optimizer, Trained};
use crate::autodiff::{sigmoid, Graph, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{multilabel_report, ClassificationReport};
use crate::nn::{collect_grads, push_linear, Linear, Parameterized};
use crate::text::{Aspect, DatasetSplit, EmbeddingProvider, ReviewRecord};

/// Aspect names in column order.
pub fn aspect_labels() -> Vec<&'static str> {
    Aspect::ALL.iter().map(|a| a.name()).collect()
}

/// Independent sigmoid per aspect over sentence embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcdModel {
    pub head: Linear,
    pub threshold: f64,
}

impl Parameterized for AcdModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        push_linear(&mut v, "head", &self.head);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.head.tensors_mut().into_iter().collect()
    }
}

impl AcdModel {
    pub fn input_dim(&self) -> usize {
        self.head.inputs()
    }

    /// Per-aspect probabilities, one row per input row.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.head.apply(x)?.map(sigmoid))
    }

    pub fn decide(&self, probs: &Tensor) -> Vec<Vec<bool>> {
        (0..probs.rows())
            .map(|r| probs.row_slice(r).iter().map(|&p| p >= self.threshold).collect())
            .collect()
    }
}

/// Target bits for the aspects a review mentions.
pub fn aspect_targets(record: &ReviewRecord) -> Vec<bool> {
    Aspect::ALL.iter().map(|a| record.aspects.contains(a)).collect()
}

fn features(
    records: &[ReviewRecord],
    provider: &EmbeddingProvider,
    drop_empty: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in records.iter().filter(|r| !(drop_empty && r.aspects.is_empty())) {
        x.push(rms_normalize(provider.embed(&r.id, &r.text)?));
        y.push(aspect_targets(r));
    }
    Ok((x, y))
}

fn target_tensor(y: &[Vec<bool>], idx: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(idx.len(), Aspect::COUNT);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &on) in y[i].iter().enumerate() {
            if on {
                t.set(r, c, 1.0);
            }
        }
    }
    t
}

pub fn train_acd(
    split: &DatasetSplit,
    config: &StageConfig,
    provider: &EmbeddingProvider,
) -> Result<Trained<AcdModel, HeadReport>> {
    if config.stage != Stage::Acd {
        return Err(Error::Usage(format!("train_acd given a {} config", config.stage)));
    }
    config.validate()?;
    let (train_x, train_y) = features(&split.train, provider, config.acd_drop_empty)?;
    let (val_x, val_y) = features(&split.validation, provider, config.acd_drop_empty)?;
    if train_y.is_empty() || val_y.is_empty() {
        return Err(Error::Usage("aspect detection needs records in train and validation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = AcdModel {
        head: Linear::init(provider.dim(), Aspect::COUNT, &mut rng),
        threshold: config.acd_threshold,
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
            let probs = g.sigmoid(logits);
            let t = g.constant(target_tensor(&train_y, &idx));
            let loss = g.binary_cross_entropy(probs, t)?;
            g.backward(loss)?;
            opt.step(&mut model, &collect_grads(&g, &order))?;
            loss_sum += g.value(loss).item();
            report.steps += 1;
        }
        report.epochs.push(EpochReport {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            validation: evaluate_rows(&model, &val_x, &val_y, config.batch_size)?.report,
        });
    }
    Ok(Trained { model, report, rng })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcdEvaluation {
    pub report: ClassificationReport,
    pub probs: Tensor,
    pub truth: Vec<Vec<bool>>,
}

fn evaluate_rows(model: &AcdModel, x: &[Vec<f64>], y: &[Vec<bool>], batch_size: usize) -> Result<AcdEvaluation> {
    let mut rows = Vec::with_capacity(y.len() * Aspect::COUNT);
    for idx in sequential_batches(y.len(), batch_size) {
        rows.extend_from_slice(model.predict(&stack_rows(x, &idx)?)?.data());
    }
    let probs = Tensor::new(y.len(), Aspect::COUNT, rows)?;
    Ok(AcdEvaluation {
        report: multilabel_report(&model.decide(&probs), y, &aspect_labels())?,
        probs,
        truth: y.to_vec(),
    })
}

pub fn evaluate_acd(
    model: &AcdModel,
    records: &[ReviewRecord],
    provider: &EmbeddingProvider,
    batch_size: usize,
) -> Result<AcdEvaluation> {
    let (x, y) = features(records, provider, false)?;
    if y.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    evaluate_rows(model, &x, &y, batch_size)
}
