//! Stage 3: aspect-level sentiment through the mixture-of-experts head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Stage, StageConfig};
use super::data::{expand_triples, gate_dim, one_hot, sequential_batches, shuffled_batches, stack_rows, AbsaFeatures};
use super::train::{Optimizer, Trained};
use crate::autodiff::{softmax_rows, Graph, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{aux_importance_var, classification_report, cov2, mse_uniform_var, ClassificationReport};
use crate::moe::{
    hard_gate_route, normalize_counts, Frozen, GateInput, Inference, MoeLayer, RouteInput, Routing, RoutingTrace,
    N_CLASSES,
};
use crate::nn::{collect_grads, Parameterized};
use crate::text::{Aspect, DatasetSplit, EmbeddingProvider, Sentiment};

pub const SENTIMENT_LABELS: [&str; 3] = ["negative", "neutral", "positive"];

/// Number of leading batches in the reported utilization window.
pub const COV2_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsaModel {
    pub layer: MoeLayer,
    pub routing: Routing,
    pub gate_input: GateInput,
}

impl Parameterized for AbsaModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layer.named_tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layer.tensors_mut()
    }
}

impl AbsaModel {
    pub fn init(config: &StageConfig, provider: &EmbeddingProvider) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init_with(config, provider, &mut rng)
    }

    fn init_with(config: &StageConfig, provider: &EmbeddingProvider, rng: &mut ChaCha8Rng) -> Result<Self> {
        let gd = gate_dim(provider, config.gate.gate_input);
        Ok(Self {
            layer: MoeLayer::init(config.gate.clone(), gd, provider.dim(), config.hidden, rng)?,
            routing: config.routing,
            gate_input: config.gate.gate_input,
        })
    }

    /// Noiseless prediction for the rows `idx` of `features`.
    pub fn infer(&self, features: &AbsaFeatures, idx: &[usize]) -> Result<Inference> {
        let x = stack_rows(&features.expert_x, idx)?;
        match self.routing {
            Routing::HardGate => {
                let experts: Vec<usize> = idx.iter().map(|&i| hard_gate_route(features.aspects[i])).collect();
                self.layer.infer(&x, None, Some(&experts))
            }
            Routing::Dynamic => {
                let gx = stack_rows(&features.gate_x, idx)?;
                self.layer.infer(&x, Some(&gx), None)
            }
        }
    }
}

/// Raises one expert's gate bias before training, creating an unbalanced
/// starting router.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSkew {
    pub expert: usize,
    pub bias: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub record_trace: bool,
    pub gate_skew: Option<GateSkew>,
}

/// Skewed-gate stress setting for load-balance experiments: single-expert
/// routing with room for every token, a gate biased toward expert 0, and
/// exploration noise. Returns the config with losses enabled; callers clear
/// `loss_weights` for the baseline run.
pub fn load_balance_stress(seed: u64) -> (StageConfig, TrainOptions) {
    let mut config = StageConfig::paper(Stage::Absa);
    config.seed = seed;
    config.learning_rate = 1e-3;
    config.gate.top_k = 1;
    config.gate.capacity_factor = config.gate.n_experts as f64;
    config.gate.fill_in_rectification = false;
    config.gate.noise_scale = 1.0;
    let options = TrainOptions {
        record_trace: false,
        gate_skew: Some(GateSkew { expert: 0, bias: 2.0 }),
    };
    (config, options)
}

/// Record count of the stress corpus.
pub const STRESS_RECORDS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsaEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    pub validation: ClassificationReport,
    pub cov2_soft: f64,
    pub cov2_hard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsaReport {
    pub train_triples: usize,
    pub steps: usize,
    pub epochs: Vec<AbsaEpoch>,
    /// Validation hard COV² before the first update.
    pub initial_cov2_hard: f64,
    /// Top-K assignments lost to capacity over all training steps.
    pub topk_drops: usize,
    /// Tokens left without their full share after rectification.
    pub unrouted: usize,
    /// Mean gate probability, `E` rows by 6 aspect columns, on validation.
    pub heatmap: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trace: RoutingTrace,
}

impl AbsaReport {
    pub fn final_epoch(&self) -> &AbsaEpoch {
        self.epochs.last().expect("at least one epoch")
    }
}

pub fn train_absa(
    split: &DatasetSplit,
    config: &StageConfig,
    provider: &EmbeddingProvider,
    options: &TrainOptions,
) -> Result<Trained<AbsaModel, AbsaReport>> {
    if config.stage != Stage::Absa {
        return Err(Error::Usage(format!("train_absa given a {} config", config.stage)));
    }
    config.validate()?;
    let train = AbsaFeatures::build(&expand_triples(&split.train), provider, config.gate.gate_input)?;
    let val = AbsaFeatures::build(&expand_triples(&split.validation), provider, config.gate.gate_input)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("ABSA training needs labeled triples in train and validation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = AbsaModel::init_with(config, provider, &mut rng)?;
    if let Some(skew) = options.gate_skew {
        if skew.expert >= config.gate.n_experts {
            return Err(Error::Usage(format!("skewed expert {} out of range", skew.expert)));
        }
        let b = &mut model.layer.gate.out.bias;
        b.set(0, skew.expert, b.get(0, skew.expert) + skew.bias);
        crate::nn::snap_f32(b);
    }
    let class_weights = config.class_weighting.then(|| inverse_frequency(&train.labels));
    let initial = evaluate_features(&model, &val, config.batch_size, 1)?;
    let mut opt = Optimizer::new(&model, config.learning_rate);
    let mut report = AbsaReport {
        train_triples: train.len(),
        steps: 0,
        epochs: Vec::new(),
        initial_cov2_hard: initial.cov2_hard_all,
        topk_drops: 0,
        unrouted: 0,
        heatmap: Vec::new(),
        trace: RoutingTrace::default(),
    };

    for epoch in 1..=config.epochs {
        let (mut loss_sum, mut ce_sum) = (0.0, 0.0);
        let batches = shuffled_batches(train.len(), config.batch_size, &mut rng);
        let n_batches = batches.len();
        for idx in batches {
            let (loss, ce, plan, probs) = absa_step(&mut model, &mut opt, &train, &idx, config, class_weights.as_deref(), &mut rng)?;
            loss_sum += loss;
            ce_sum += ce;
            report.topk_drops += plan.dropped.iter().map(|d| d.missing).sum::<usize>() + plan.ir_reroutes.iter().map(|r| r.multiplicity).sum::<usize>();
            report.unrouted += plan.dropped.len();
            if options.record_trace {
                let aspects: Vec<Aspect> = idx.iter().map(|&i| train.aspects[i]).collect();
                report.trace.record(report.steps, &plan, &aspects, probs.as_ref());
            }
            report.steps += 1;
        }
        let ev = evaluate_features(&model, &val, config.batch_size, 1)?;
        report.epochs.push(AbsaEpoch {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            train_ce: ce_sum / n_batches as f64,
            validation: ev.report.clone(),
            cov2_soft: ev.cov2_soft_all,
            cov2_hard: ev.cov2_hard_all,
        });
        if epoch == config.epochs {
            report.heatmap = ev.heatmap;
        }
    }
    Ok(Trained { model, report, rng })
}

fn inverse_frequency(labels: &[usize]) -> Vec<f64> {
    let mut counts = [0usize; N_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (N_CLASSES as f64 * c as f64) })
        .collect()
}

type StepOut = (f64, f64, crate::moe::RoutingPlan, Option<Tensor>);

fn absa_step(
    model: &mut AbsaModel,
    opt: &mut Optimizer,
    data: &AbsaFeatures,
    idx: &[usize],
    config: &StageConfig,
    class_weights: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Result<StepOut> {
    let mut g = Graph::new();
    let mut order = Vec::new();
    let vars = model.layer.bind(&mut g, &mut order);
    let x = g.constant(stack_rows(&data.expert_x, idx)?);
    let hard: Vec<usize>;
    let route = match model.routing {
        Routing::HardGate => {
            hard = idx.iter().map(|&i| hard_gate_route(data.aspects[i])).collect();
            RouteInput::Hard { experts: &hard }
        }
        Routing::Dynamic => RouteInput::Dynamic {
            gate_x: g.constant(stack_rows(&data.gate_x, idx)?),
            noise: Some(rng),
        },
    };
    let f = model.layer.forward(&mut g, &vars, x, route, Frozen::default())?;
    let probs = g.softmax_rows(f.output);
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let mut targets = one_hot(&labels, N_CLASSES);
    if let Some(w) = class_weights {
        for (r, &l) in labels.iter().enumerate() {
            targets.set(r, l, w[l]);
        }
    }
    let t = g.constant(targets);
    let ce = g.cross_entropy(probs, t)?;
    let mut total = ce;
    if let Some(gate_probs) = f.probs {
        let lw = &config.loss_weights;
        if lw.enable_aux || lw.enable_mse {
            let u = g.mean_rows(gate_probs)?;
            if lw.enable_aux {
                let aux = aux_importance_var(&mut g, u, lw.lambda_aux)?;
                total = g.add(total, aux)?;
            }
            if lw.enable_mse {
                let mse = mse_uniform_var(&mut g, u, lw.lambda_mse);
                total = g.add(total, mse)?;
            }
        }
    }
    g.backward(total)?;
    let grads = collect_grads(&g, &order);
    opt.step(model, &grads)?;
    let gate_probs = f.probs.map(|p| g.value(p).clone());
    Ok((g.value(total).item(), g.value(ce).item(), f.plan, gate_probs))
}

/// Noiseless evaluation of an ABSA model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsaEvaluation {
    pub report: ClassificationReport,
    /// Class probabilities, one row per triple.
    pub probs: Tensor,
    pub labels: Vec<usize>,
    pub cov2_soft_window: f64,
    pub cov2_hard_window: f64,
    pub cov2_soft_all: f64,
    pub cov2_hard_all: f64,
    pub heatmap: Vec<Vec<f64>>,
    pub n_batches: usize,
    pub unrouted: usize,
}

/// Evaluates labeled records; `threads` bounds the parallel batch workers.
pub fn evaluate_absa(
    model: &AbsaModel,
    records: &[crate::text::ReviewRecord],
    provider: &EmbeddingProvider,
    batch_size: usize,
    threads: usize,
) -> Result<AbsaEvaluation> {
    let feats = AbsaFeatures::build(&expand_triples(records), provider, model.gate_input)?;
    evaluate_features(model, &feats, batch_size, threads)
}

pub fn evaluate_features(
    model: &AbsaModel,
    feats: &AbsaFeatures,
    batch_size: usize,
    threads: usize,
) -> Result<AbsaEvaluation> {
    if feats.is_empty() {
        return Err(Error::Usage("evaluation set has no labeled triples".into()));
    }
    let batches = sequential_batches(feats.len(), batch_size);
    let run = || -> Result<Vec<Inference>> { batches.par_iter().map(|idx| model.infer(feats, idx)).collect() };
    let outs = if threads <= 1 {
        batches.iter().map(|idx| model.infer(feats, idx)).collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?
            .install(run)?
    };

    let e = model.layer.config.n_experts;
    let mut preds = Vec::with_capacity(feats.len());
    let mut prob_rows = Vec::with_capacity(feats.len() * N_CLASSES);
    // Per batch: summed soft routing mass and slot counts.
    let mut soft = Vec::with_capacity(outs.len());
    let mut hard = Vec::with_capacity(outs.len());
    let mut heat = vec![vec![0.0; Aspect::COUNT]; e];
    let mut aspect_counts = [0usize; Aspect::COUNT];
    let mut unrouted = 0;
    for (idx, inf) in batches.iter().zip(&outs) {
        let p = softmax_rows(&inf.output);
        for r in 0..p.rows() {
            let row = p.row_slice(r);
            preds.push(argmax(row));
            prob_rows.extend_from_slice(row);
        }
        let gate = routing_mass(inf, e);
        let mut mass = vec![0.0; e];
        for (k, &i) in idx.iter().enumerate() {
            let a = feats.aspects[i].index();
            aspect_counts[a] += 1;
            for (x, g) in gate.row_slice(k).iter().enumerate() {
                mass[x] += g;
                heat[x][a] += g;
            }
        }
        soft.push((mass, idx.len()));
        hard.push(inf.plan.occupancy());
        unrouted += inf.plan.dropped.len();
    }
    for row in &mut heat {
        for (v, &c) in row.iter_mut().zip(&aspect_counts) {
            if c > 0 {
                *v /= c as f64;
            }
        }
    }
    let soft_cov = |n: usize| -> Result<f64> {
        let mut m = vec![0.0; e];
        let mut tokens = 0;
        for (mass, count) in soft.iter().take(n) {
            for (a, b) in m.iter_mut().zip(mass) {
                *a += b;
            }
            tokens += count;
        }
        cov2(&m.iter().map(|v| v / tokens as f64).collect::<Vec<_>>())
    };
    let hard_cov = |n: usize| -> Result<f64> {
        let mut c = vec![0usize; e];
        for occ in hard.iter().take(n) {
            for (a, b) in c.iter_mut().zip(occ) {
                *a += b;
            }
        }
        cov2(&normalize_counts(&c)?.u)
    };
    Ok(AbsaEvaluation {
        report: classification_report(&preds, &feats.labels, &SENTIMENT_LABELS)?,
        probs: Tensor::new(feats.len(), N_CLASSES, prob_rows)?,
        labels: feats.labels.clone(),
        cov2_soft_window: soft_cov(COV2_WINDOW)?,
        cov2_hard_window: hard_cov(COV2_WINDOW)?,
        cov2_soft_all: soft_cov(usize::MAX)?,
        cov2_hard_all: hard_cov(usize::MAX)?,
        heatmap: heat,
        n_batches: batches.len(),
        unrouted,
    })
}

/// Gate probabilities, or the one-hot assignment under the hard gate.
fn routing_mass(inf: &Inference, n_experts: usize) -> Tensor {
    match &inf.scores {
        Some(s) => s.probs.clone(),
        None => {
            let mut t = Tensor::zeros(inf.plan.n_tokens, n_experts);
            for (i, r) in inf.plan.routed.iter().enumerate() {
                t.set(i, r[0].expert, 1.0);
            }
            t
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Sentiment predicted for a single (review, aspect) pair.
pub fn predict_pair(
    model: &AbsaModel,
    provider: &EmbeddingProvider,
    record: &crate::text::ReviewRecord,
    aspect: Aspect,
) -> Result<Sentiment> {
    let rec = record.clone().with_label(aspect, Sentiment::Neutral);
    let triples: Vec<_> = expand_triples(std::slice::from_ref(&rec))
        .into_iter()
        .filter(|t| t.aspect == aspect)
        .collect();
    let feats = AbsaFeatures::build(&triples, provider, model.gate_input)?;
    let inf = model.infer(&feats, &[0])?;
    Ok(Sentiment::from_index(argmax(inf.output.row_slice(0))).expect("three classes"))
}
