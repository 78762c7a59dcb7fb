//! Text-to-vector providers standing in for a sentence encoder.
//!
//! `HashedNgram` hashes whitespace tokens and in-token character 2/3-grams
//! into `dim` signed buckets. Pair embeddings for (review, aspect) inputs add
//! the aspect's surface form and aspect-conditioned word unigrams and
//! bigrams, the hashed analogue of encoding a sentence/aspect pair.
//! `Precomputed` looks vectors up by record id in a file.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::Aspect;
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_EMBED_SEED: u64 = 42;

/// Serializable description of a provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    HashedNgram { dim: usize, seed: u64 },
    PrecomputedFile { path: PathBuf },
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::HashedNgram {
            dim: DEFAULT_DIM,
            seed: DEFAULT_EMBED_SEED,
        }
    }
}

impl ProviderSpec {
    pub fn build(&self) -> Result<EmbeddingProvider> {
        match self {
            ProviderSpec::HashedNgram { dim, seed } => EmbeddingProvider::hashed(*dim, *seed),
            ProviderSpec::PrecomputedFile { path } => EmbeddingProvider::precomputed_path(path),
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Hashed,
    Precomputed(HashMap<String, Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct EmbeddingProvider {
    kind: Kind,
    dim: usize,
    seed: u64,
    spec: ProviderSpec,
    aspect_cache: Vec<Vec<f64>>,
}

impl EmbeddingProvider {
    pub fn hashed(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Usage("embedding dim must be positive".into()));
        }
        let mut p = Self {
            kind: Kind::Hashed,
            dim,
            seed,
            spec: ProviderSpec::HashedNgram { dim, seed },
            aspect_cache: Vec::new(),
        };
        p.fill_aspect_cache();
        Ok(p)
    }

    /// Reads `id,dim` then `record_id,v1,...,v_dim` rows.
    pub fn precomputed_reader<R: Read>(reader: R, spec: ProviderSpec) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty embedding file".into()))?
            .map_err(|e| Error::io("<embeddings>", e))?;
        let dim: usize = header
            .trim()
            .strip_prefix("id,")
            .and_then(|d| d.trim().parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Schema(format!("bad embedding header {header:?}, want `id,<dim>`")))?;
        let mut table = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().to_string();
            let values: std::result::Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| Error::Schema(format!("embedding row {}: {e}", i + 1)))?;
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "embedding row {} has {} finite values, want {dim}",
                    i + 1,
                    values.len()
                )));
            }
            table.insert(id, values);
        }
        let mut p = Self {
            kind: Kind::Precomputed(table),
            dim,
            seed: DEFAULT_EMBED_SEED,
            spec,
            aspect_cache: Vec::new(),
        };
        p.fill_aspect_cache();
        Ok(p)
    }

    pub fn precomputed_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::precomputed_reader(
            f,
            ProviderSpec::PrecomputedFile {
                path: path.to_path_buf(),
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    /// Sentence embedding for the record with id `id` and normalized `text`.
    pub fn embed(&self, id: &str, text: &str) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Hashed => Ok(self.hash_features(&sentence_features(text))),
            Kind::Precomputed(table) => lookup(table, id),
        }
    }

    /// Joint embedding of a review and one of its aspects. Precomputed
    /// files may provide `<id>#<aspect>` rows; otherwise the sentence row is
    /// used.
    pub fn embed_pair(&self, id: &str, text: &str, aspect: Aspect) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Hashed => {
                let mut feats = sentence_features(text);
                feats.push(format!("a\u{1F}{}", aspect.persian()));
                let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
                for w in &words {
                    feats.push(format!("x\u{1F}{}\u{1F}{w}", aspect.name()));
                }
                for pair in words.windows(2) {
                    feats.push(format!("y\u{1F}{}\u{1F}{}\u{1F}{}", aspect.name(), pair[0], pair[1]));
                }
                Ok(self.hash_features(&feats))
            }
            Kind::Precomputed(table) => {
                let key = format!("{id}#{}", aspect.name());
                table
                    .get(&key)
                    .cloned()
                    .map_or_else(|| lookup(table, id), Ok)
            }
        }
    }

    /// Embedding of the aspect's canonical Persian surface form. Precomputed
    /// files may provide `aspect:<name>` rows; otherwise the hashed encoder
    /// at the file's dimension is used.
    pub fn aspect_embedding(&self, aspect: Aspect) -> &[f64] {
        &self.aspect_cache[aspect.index()]
    }

    fn fill_aspect_cache(&mut self) {
        self.aspect_cache = Aspect::ALL
            .iter()
            .map(|a| {
                if let Kind::Precomputed(table) = &self.kind {
                    if let Some(v) = table.get(&format!("aspect:{}", a.name())) {
                        return v.clone();
                    }
                }
                self.hash_features(&sentence_features(a.persian()))
            })
            .collect();
    }

    fn hash_features(&self, feats: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if feats.is_empty() {
            return v;
        }
        let scale = 1.0 / (feats.len() as f64).sqrt();
        for f in feats {
            let h = hash64(f.as_bytes(), self.seed);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign * scale;
        }
        v
    }
}

fn lookup(table: &HashMap<String, Vec<f64>>, id: &str) -> Result<Vec<f64>> {
    table.get(id).cloned().ok_or_else(|| Error::Lookup(id.to_string()))
}

/// Whitespace tokens plus character 2- and 3-grams inside each token.
fn sentence_features(text: &str) -> Vec<String> {
    let mut feats = Vec::new();
    for word in text.split(' ').filter(|w| !w.is_empty()) {
        feats.push(format!("w\u{1F}{word}"));
        let chars: Vec<char> = word.chars().collect();
        for n in [2usize, 3] {
            for gram in chars.windows(n) {
                let mut f = String::with_capacity(2 + 4 * n);
                f.push(if n == 2 { 'b' } else { 't' });
                f.push('\u{1F}');
                f.extend(gram);
                feats.push(f);
            }
        }
    }
    feats
}

/// Seeded FNV-1a followed by a splitmix64 finalizer.
pub(crate) fn hash64(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
