use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor};
use crate::error::Result;
use crate::metrics::ClassificationReport;
use crate::nn::{snap_f32, Parameterized};

/// Adam over a model's tensors; parameters are rounded to `f32` after
/// every step so checkpoints round-trip exactly.
pub(crate) struct Optimizer {
    state: AdamState,
    cfg: AdamConfig,
}

impl Optimizer {
    pub(crate) fn new<M: Parameterized>(model: &M, lr: f64) -> Self {
        let tensors: Vec<&Tensor> = model.named_tensors().into_iter().map(|(_, t)| t).collect();
        Self {
            state: AdamState::new(&tensors),
            cfg: AdamConfig::with_lr(lr),
        }
    }

    pub(crate) fn step<M: Parameterized>(&mut self, model: &mut M, grads: &[Tensor]) -> Result<()> {
        let mut params = model.tensors_mut();
        adam_step(&mut params, grads, &mut self.state, &self.cfg)?;
        for p in params {
            snap_f32(p);
        }
        Ok(())
    }
}

/// Serializable position of the training generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string (it is 128 bits wide).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| crate::Error::Format(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Validation summary after one epoch of a linear-head stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: ClassificationReport,
}

/// Training summary of a linear-head stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub train_examples: usize,
    pub steps: usize,
    pub epochs: Vec<EpochReport>,
}

impl HeadReport {
    pub fn final_epoch(&self) -> &EpochReport {
        self.epochs.last().expect("at least one epoch")
    }
}

/// Model, report and the generator state after training.
pub struct Trained<M, R> {
    pub model: M,
    pub report: R,
    pub rng: ChaCha8Rng,
}
