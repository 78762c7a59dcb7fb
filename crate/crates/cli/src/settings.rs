//! Stage configuration from paper defaults, a flat `key=value` file, and
//! command-line overrides, in that order.

use std::path::{Path, PathBuf};

use moe_absa::moe::{GateInput, Routing};
use moe_absa::pipeline::{Stage, StageConfig};
use moe_absa::text::{ProviderSpec, DEFAULT_DIM, DEFAULT_EMBED_SEED};
use moe_absa::{Error, Result};

const ABSA_ONLY: &[&str] = &[
    "hidden",
    "experts",
    "top_k",
    "capacity_factor",
    "noise_scale",
    "groups",
    "intra_group_rectification",
    "fill_in_rectification",
    "gate_input",
    "routing",
    "aux",
    "mse",
    "lambda_aux",
    "lambda_mse",
    "class_weighting",
];

/// Resolved training settings.
#[derive(Clone, Debug)]
pub struct Settings {
    pub config: StageConfig,
    pub provider: ProviderSpec,
}

struct ProviderParts {
    dim: usize,
    embed_seed: u64,
    embeddings: Option<PathBuf>,
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key=value", n + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Usage(format!("bad value {v:?} for {key}, want true or false"))),
    }
}

pub fn parse_routing(v: &str) -> Result<Routing> {
    match v {
        "dynamic" => Ok(Routing::Dynamic),
        "hard_gate" | "hard-gate" => Ok(Routing::HardGate),
        _ => Err(Error::Usage(format!("unknown routing {v:?}, want dynamic or hard_gate"))),
    }
}

fn parse_gate_input(v: &str) -> Result<GateInput> {
    match v {
        "aspect" => Ok(GateInput::Aspect),
        "aspect_and_sentence" => Ok(GateInput::AspectAndSentence),
        _ => Err(Error::Usage(format!("unknown gate input {v:?}, want aspect or aspect_and_sentence"))),
    }
}

fn apply(c: &mut StageConfig, p: &mut ProviderParts, key: &str, v: &str) -> Result<()> {
    if c.stage != Stage::Absa && ABSA_ONLY.contains(&key) {
        return Err(Error::Usage(format!("{key} only applies to the absa stage")));
    }
    match key {
        "seed" => c.seed = parse(key, v)?,
        "learning_rate" => c.learning_rate = parse(key, v)?,
        "batch_size" => c.batch_size = parse(key, v)?,
        "epochs" => c.epochs = parse(key, v)?,
        "hidden" => c.hidden = parse(key, v)?,
        "experts" => c.gate.n_experts = parse(key, v)?,
        "top_k" => c.gate.top_k = parse(key, v)?,
        "capacity_factor" => c.gate.capacity_factor = parse(key, v)?,
        "noise_scale" => c.gate.noise_scale = parse(key, v)?,
        "groups" => c.gate.n_groups = parse(key, v)?,
        "intra_group_rectification" => c.gate.intra_group_rectification = parse_bool(key, v)?,
        "fill_in_rectification" => c.gate.fill_in_rectification = parse_bool(key, v)?,
        "gate_input" => c.gate.gate_input = parse_gate_input(v)?,
        "routing" => c.routing = parse_routing(v)?,
        "aux" => c.loss_weights.enable_aux = parse_bool(key, v)?,
        "mse" => c.loss_weights.enable_mse = parse_bool(key, v)?,
        "lambda_aux" => c.loss_weights.lambda_aux = parse(key, v)?,
        "lambda_mse" => c.loss_weights.lambda_mse = parse(key, v)?,
        "class_weighting" => c.class_weighting = parse_bool(key, v)?,
        "acd_threshold" => c.acd_threshold = parse(key, v)?,
        "acd_drop_empty" => c.acd_drop_empty = parse_bool(key, v)?,
        "pseudo_threshold" => c.pseudo_threshold = parse(key, v)?,
        "manual_budget" => c.manual_budget = parse(key, v)?,
        "dim" => p.dim = parse(key, v)?,
        "embed_seed" => p.embed_seed = parse(key, v)?,
        "embeddings" => p.embeddings = Some(PathBuf::from(v)),
        _ => return Err(Error::Usage(format!("unknown config key {key:?}"))),
    }
    Ok(())
}

/// Paper defaults for `stage`, then `file`, then `overrides`.
pub fn resolve(stage: Stage, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Settings> {
    let mut config = StageConfig::paper(stage);
    let mut parts = ProviderParts {
        dim: DEFAULT_DIM,
        embed_seed: DEFAULT_EMBED_SEED,
        embeddings: None,
    };
    let mut pairs = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        pairs.extend(parse_file(&text)?);
    }
    pairs.extend(overrides.iter().cloned());
    for (k, v) in &pairs {
        apply(&mut config, &mut parts, k, v)?;
    }
    config.validate()?;
    let provider = match parts.embeddings {
        Some(path) => ProviderSpec::PrecomputedFile { path },
        None => ProviderSpec::HashedNgram {
            dim: parts.dim,
            seed: parts.embed_seed,
        },
    };
    Ok(Settings { config, provider })
}
