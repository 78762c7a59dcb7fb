//! Review preprocessing, dataset ingestion and splitting, the synthetic
//! corpus generator, and embedding providers.

pub mod embed;
pub mod ingest;
pub mod normalize;
pub mod record;
pub mod split;
pub mod synth;

pub use embed::{cosine, EmbeddingProvider, ProviderSpec, DEFAULT_DIM, DEFAULT_EMBED_SEED};
pub use ingest::{
    ingest_csv, ingest_reader, preprocess, write_csv, write_csv_path, Ingested, PreprocessStats, RejectedRow,
};
pub use normalize::{normalize_text, NormalizeStats, Normalizer, SpellingTable};
pub use record::{Aspect, ReviewRecord, Sentiment};
pub use split::{split_dataset, DatasetSplit, DEFAULT_RATIOS};
pub use synth::{label_proportions, synth_corpus, synth_with, SynthConfig};
