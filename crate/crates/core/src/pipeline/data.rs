use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::moe::GateInput;
use crate::text::{Aspect, EmbeddingProvider, ReviewRecord, Sentiment};

/// One `(review, aspect, sentiment)` training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple<'a> {
    pub record: &'a ReviewRecord,
    pub aspect: Aspect,
    pub sentiment: Sentiment,
}

pub fn expand_triples(records: &[ReviewRecord]) -> Vec<Triple<'_>> {
    records
        .iter()
        .flat_map(|r| {
            r.triples().map(move |(aspect, sentiment)| Triple {
                record: r,
                aspect,
                sentiment,
            })
        })
        .collect()
}

/// Precomputed ABSA inputs, one row per triple.
#[derive(Clone, Debug)]
pub struct AbsaFeatures {
    pub expert_x: Vec<Vec<f64>>,
    pub gate_x: Vec<Vec<f64>>,
    pub aspects: Vec<Aspect>,
    pub labels: Vec<usize>,
}

impl AbsaFeatures {
    pub fn build(triples: &[Triple<'_>], provider: &EmbeddingProvider, gate_input: GateInput) -> Result<Self> {
        let mut f = Self {
            expert_x: Vec::with_capacity(triples.len()),
            gate_x: Vec::with_capacity(triples.len()),
            aspects: Vec::with_capacity(triples.len()),
            labels: Vec::with_capacity(triples.len()),
        };
        for t in triples {
            f.expert_x.push(rms_normalize(provider.embed_pair(&t.record.id, &t.record.text, t.aspect)?));
            let mut g = rms_normalize(provider.aspect_embedding(t.aspect).to_vec());
            if gate_input == GateInput::AspectAndSentence {
                g.extend(rms_normalize(provider.embed(&t.record.id, &t.record.text)?));
            }
            f.gate_x.push(g);
            f.aspects.push(t.aspect);
            f.labels.push(t.sentiment.index());
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Rescales `v` to unit root-mean-square entry, the output scale of a
/// layer-normalized encoder. Zero vectors are returned unchanged.
pub fn rms_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64;
    if ms > 0.0 {
        let inv = 1.0 / ms.sqrt();
        v.iter_mut().for_each(|x| *x *= inv);
    }
    v
}

pub fn gate_dim(provider: &EmbeddingProvider, gate_input: GateInput) -> usize {
    match gate_input {
        GateInput::Aspect => provider.dim(),
        GateInput::AspectAndSentence => 2 * provider.dim(),
    }
}

/// Rows `idx` of `rows` as a tensor.
pub fn stack_rows(rows: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    let cols = idx.first().map_or(0, |&i| rows[i].len());
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        if rows[i].len() != cols {
            return Err(Error::dim("stack_rows", (1, rows[i].len()), (1, cols)));
        }
        data.extend_from_slice(&rows[i]);
    }
    Tensor::new(idx.len(), cols, data)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        t.set(i, l, 1.0);
    }
    t
}

/// Shuffled minibatches covering `0..n`; the last one may be short.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// In-order minibatches covering `0..n`.
pub fn sequential_batches(n: usize, batch: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_count_matches_labels() {
        let recs = vec![
            ReviewRecord::new("a", "x")
                .with_label(Aspect::Price, Sentiment::Negative)
                .with_label(Aspect::Host, Sentiment::Positive),
            ReviewRecord::new("b", "y"),
        ];
        assert_eq!(expand_triples(&recs).len(), 2);
    }

    #[test]
    fn batches_cover_everything() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let b = shuffled_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
