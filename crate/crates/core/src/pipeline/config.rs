use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LossWeights;
use crate::moe::{GateConfig, Routing, DEFAULT_HIDDEN};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PSEUDO_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MANUAL_BUDGET: usize = 1800;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sentiment,
    Acd,
    Absa,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Sentiment, Stage::Acd, Stage::Absa];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sentiment => "sentiment",
            Stage::Acd => "acd",
            Stage::Absa => "absa",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Expert hidden width (ABSA only).
    pub hidden: usize,
    pub gate: GateConfig,
    pub loss_weights: LossWeights,
    pub routing: Routing,
    /// Inverse-frequency class weights in the loss; off by default.
    pub class_weighting: bool,
    /// Sigmoid cut-off for aspect detection.
    pub acd_threshold: f64,
    /// Drop reviews with no aspect from aspect-detection training.
    pub acd_drop_empty: bool,
    /// Minimum class probability for a pseudo-label.
    pub pseudo_threshold: f64,
    /// Most confident pseudo-labels set aside for manual review.
    pub manual_budget: usize,
}

impl StageConfig {
    /// Paper hyperparameters for `stage`.
    pub fn paper(stage: Stage) -> Self {
        let (learning_rate, batch_size, epochs) = match stage {
            Stage::Sentiment => (2e-5, 32, 4),
            Stage::Acd => (1.7e-5, 8, 4),
            Stage::Absa => (1.8552e-5, 8, 3),
        };
        Self {
            stage,
            learning_rate,
            batch_size,
            epochs,
            seed: DEFAULT_SEED,
            hidden: DEFAULT_HIDDEN,
            gate: GateConfig::default(),
            loss_weights: LossWeights::default(),
            routing: Routing::Dynamic,
            class_weighting: false,
            acd_threshold: 0.5,
            acd_drop_empty: false,
            pseudo_threshold: DEFAULT_PSEUDO_THRESHOLD,
            manual_budget: DEFAULT_MANUAL_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Usage("epochs must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Usage("hidden width must be >= 1".into()));
        }
        if !(self.acd_threshold > 0.0 && self.acd_threshold < 1.0) {
            return Err(Error::Usage(format!("acd threshold must be in (0, 1), got {}", self.acd_threshold)));
        }
        if !(self.pseudo_threshold > 0.5 && self.pseudo_threshold <= 1.0) {
            return Err(Error::Usage(format!(
                "pseudo-label threshold must be in (0.5, 1], got {}",
                self.pseudo_threshold
            )));
        }
        self.loss_weights.validate()?;
        if self.stage == Stage::Absa {
            self.gate.validate()?;
            if self.batch_size % self.gate.n_groups != 0 {
                return Err(Error::Usage(format!(
                    "{} groups do not divide batch size {}",
                    self.gate.n_groups, self.batch_size
                )));
            }
        }
        Ok(())
    }
}
