use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EXPERTS: usize = 6;
pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_CAPACITY_FACTOR: f64 = 1.8;
pub const DEFAULT_NOISE_SCALE: f64 = 0.098323;

/// What the gate sees for each token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateInput {
    /// Aspect embedding only.
    #[default]
    Aspect,
    /// Aspect embedding concatenated with the sentence embedding.
    AspectAndSentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub n_experts: usize,
    pub top_k: usize,
    pub capacity_factor: f64,
    pub noise_scale: f64,
    pub n_groups: usize,
    pub intra_group_rectification: bool,
    pub fill_in_rectification: bool,
    pub gate_input: GateInput,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            n_experts: DEFAULT_EXPERTS,
            top_k: DEFAULT_TOP_K,
            capacity_factor: DEFAULT_CAPACITY_FACTOR,
            noise_scale: DEFAULT_NOISE_SCALE,
            n_groups: 1,
            intra_group_rectification: true,
            fill_in_rectification: true,
            gate_input: GateInput::Aspect,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.top_k == 0 || self.top_k > self.n_experts {
            return Err(Error::Usage(format!(
                "need 1 <= top_k ({}) <= n_experts ({})",
                self.top_k, self.n_experts
            )));
        }
        if !(self.capacity_factor > 0.0 && self.capacity_factor.is_finite()) {
            return Err(Error::Usage(format!(
                "capacity_factor must be positive, got {}",
                self.capacity_factor
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Usage(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        if self.n_groups == 0 {
            return Err(Error::Usage("n_groups must be >= 1".into()));
        }
        Ok(())
    }

    /// Tokens per group for a batch of `batch` tokens.
    pub fn group_size(&self, batch: usize) -> Result<usize> {
        if batch == 0 || batch % self.n_groups != 0 {
            return Err(Error::Usage(format!(
                "{} groups do not divide a batch of {batch}",
                self.n_groups
            )));
        }
        Ok(batch / self.n_groups)
    }

    /// Copy whose group count is the largest divisor of `batch` not above
    /// `n_groups`, for short final batches.
    pub fn for_batch(&self, batch: usize) -> GateConfig {
        let n_groups = (1..=self.n_groups.min(batch).max(1))
            .rev()
            .find(|g| batch % g == 0)
            .unwrap_or(1);
        GateConfig {
            n_groups,
            ..self.clone()
        }
    }
}

/// Per-expert slot count `ceil(capacity_factor * B * K / E)`, where `B` is
/// the group size when the batch is split into several groups.
pub fn capacity(config: &GateConfig, batch: usize) -> Result<usize> {
    config.validate()?;
    let b = config.group_size(batch)?;
    let raw = config.capacity_factor * (b * config.top_k) as f64 / config.n_experts as f64;
    // Guard against 7.2000000001-style float noise pushing ceil up a slot.
    let rounded = (raw * 1e9).round() / 1e9;
    Ok(rounded.ceil() as usize)
}
