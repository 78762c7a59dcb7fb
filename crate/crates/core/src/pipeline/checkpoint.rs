//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `MOEABSA1`, a little-endian `u64` metadata
//! length, the metadata as JSON, every tensor as little-endian `f32` in
//! manifest order, then the FNV-1a 64 checksum of the payload bytes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::absa::AbsaModel;
use super::acd::AcdModel;
use super::config::{Stage, StageConfig};
use super::sentiment::SentimentModel;
use super::train::RngState;
use crate::error::{Error, Result};
use crate::moe::{MoeLayer, N_CLASSES};
use crate::nn::{Linear, Parameterized};
use crate::text::{Aspect, ProviderSpec};

pub const MAGIC: &[u8; 8] = b"MOEABSA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StageModel {
    Sentiment(SentimentModel),
    Acd(AcdModel),
    Absa(AbsaModel),
}

impl StageModel {
    pub fn stage(&self) -> Stage {
        match self {
            StageModel::Sentiment(_) => Stage::Sentiment,
            StageModel::Acd(_) => Stage::Acd,
            StageModel::Absa(_) => Stage::Absa,
        }
    }

    fn params(&self) -> &dyn Parameterized {
        match self {
            StageModel::Sentiment(m) => m,
            StageModel::Acd(m) => m,
            StageModel::Absa(m) => m,
        }
    }

    fn params_mut(&mut self) -> &mut dyn Parameterized {
        match self {
            StageModel::Sentiment(m) => m,
            StageModel::Acd(m) => m,
            StageModel::Absa(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: StageConfig,
    pub provider: ProviderSpec,
    pub rng: RngState,
    /// Metrics at save time, free-form.
    pub metrics: serde_json::Value,
    pub model: StageModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    version: u32,
    stage: Stage,
    seed: u64,
    config: StageConfig,
    provider: ProviderSpec,
    input_dim: usize,
    gate_dim: usize,
    manifest: Vec<TensorEntry>,
    rng: RngState,
    metrics: serde_json::Value,
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Checkpoint {
    pub fn stage(&self) -> Stage {
        self.model.stage()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.config.stage != self.stage() {
            return Err(Error::Usage(format!(
                "{} config saved with a {} model",
                self.config.stage,
                self.stage()
            )));
        }
        let named = self.model.params().named_tensors();
        let (input_dim, gate_dim) = match &self.model {
            StageModel::Sentiment(m) => (m.input_dim(), 0),
            StageModel::Acd(m) => (m.input_dim(), 0),
            StageModel::Absa(m) => (m.layer.experts.input_dim(), m.layer.gate.input_dim()),
        };
        let meta = Metadata {
            version: FORMAT_VERSION,
            stage: self.stage(),
            seed: self.config.seed,
            config: self.config.clone(),
            provider: self.provider.clone(),
            input_dim,
            gate_dim,
            manifest: named
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
            rng: self.rng.clone(),
            metrics: self.metrics.clone(),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut payload = Vec::with_capacity(4 * named.iter().map(|(_, t)| t.len()).sum::<usize>());
        for (_, t) in &named {
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + meta.len() + payload.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let rest = &bytes[MAGIC.len()..];
        let (len, rest) = split_u64(rest)?;
        let len = usize::try_from(len).map_err(|_| Error::Integrity("metadata length overflows".into()))?;
        if rest.len() < len {
            return Err(Error::Integrity(format!("metadata needs {len} bytes, {} left", rest.len())));
        }
        let (meta, rest) = rest.split_at(len);
        let meta: Metadata =
            serde_json::from_slice(meta).map_err(|e| Error::Format(format!("unreadable metadata: {e}")))?;
        if meta.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {} not supported (want {FORMAT_VERSION})",
                meta.version
            )));
        }
        if meta.config.stage != meta.stage {
            return Err(Error::Format("stage tag disagrees with config".into()));
        }
        let floats: usize = meta.manifest.iter().map(|e| e.rows * e.cols).sum();
        if rest.len() != 4 * floats + 8 {
            return Err(Error::Integrity(format!(
                "payload is {} bytes, manifest needs {}",
                rest.len(),
                4 * floats + 8
            )));
        }
        let (payload, sum) = rest.split_at(4 * floats);
        let (sum, _) = split_u64(sum)?;
        if fnv1a64(payload) != sum {
            return Err(Error::Integrity("payload checksum mismatch".into()));
        }

        let mut model = skeleton(&meta)?;
        let expected: Vec<TensorEntry> = model
            .params()
            .named_tensors()
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect();
        if expected != meta.manifest {
            return Err(Error::Format("tensor manifest does not match the stage's model".into()));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        for t in model.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v = values.next().expect("length checked");
            }
        }
        Ok(Checkpoint {
            config: meta.config,
            provider: meta.provider,
            rng: meta.rng,
            metrics: meta.metrics,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn into_sentiment(self) -> Result<SentimentModel> {
        match self.model {
            StageModel::Sentiment(m) => Ok(m),
            other => Err(stage_mismatch(Stage::Sentiment, other.stage())),
        }
    }

    pub fn into_acd(self) -> Result<AcdModel> {
        match self.model {
            StageModel::Acd(m) => Ok(m),
            other => Err(stage_mismatch(Stage::Acd, other.stage())),
        }
    }

    pub fn into_absa(self) -> Result<AbsaModel> {
        match self.model {
            StageModel::Absa(m) => Ok(m),
            other => Err(stage_mismatch(Stage::Absa, other.stage())),
        }
    }
}

fn stage_mismatch(want: Stage, got: Stage) -> Error {
    Error::Usage(format!("expected a {want} checkpoint, got {got}"))
}

fn split_u64(b: &[u8]) -> Result<(u64, &[u8])> {
    if b.len() < 8 {
        return Err(Error::Integrity("file truncated".into()));
    }
    let (head, rest) = b.split_at(8);
    Ok((u64::from_le_bytes(head.try_into().expect("8 bytes")), rest))
}

/// A model of the right shape whose values are about to be overwritten.
fn skeleton(meta: &Metadata) -> Result<StageModel> {
    let c = &meta.config;
    Ok(match meta.stage {
        Stage::Sentiment => StageModel::Sentiment(SentimentModel {
            head: Linear::zeros(meta.input_dim, N_CLASSES),
        }),
        Stage::Acd => StageModel::Acd(AcdModel {
            head: Linear::zeros(meta.input_dim, Aspect::COUNT),
            threshold: c.acd_threshold,
        }),
        Stage::Absa => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            StageModel::Absa(AbsaModel {
                layer: MoeLayer::init(c.gate.clone(), meta.gate_dim, meta.input_dim, c.hidden, &mut rng)?,
                routing: c.routing,
                gate_input: c.gate.gate_input,
            })
        }
    })
}
