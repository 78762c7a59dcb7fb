//! Checkpoint files for all three stages.

use moe_absa::pipeline::{
    train_absa, train_acd, train_sentiment, Checkpoint, RngState, Stage, StageConfig, StageModel, TrainOptions, MAGIC,
};
use moe_absa::text::{split_dataset, synth_corpus, EmbeddingProvider, ProviderSpec, DEFAULT_RATIOS};
use moe_absa::Error;

fn trained(stage: Stage) -> Checkpoint {
    let s = split_dataset(&synth_corpus(42, 200), DEFAULT_RATIOS, 42).unwrap();
    let p = EmbeddingProvider::hashed(64, 42).unwrap();
    let mut config = StageConfig::paper(stage);
    config.epochs = 1;
    let (model, rng) = match stage {
        Stage::Sentiment => {
            let t = train_sentiment(&s, &config, &p).unwrap();
            (StageModel::Sentiment(t.model), t.rng)
        }
        Stage::Acd => {
            let t = train_acd(&s, &config, &p).unwrap();
            (StageModel::Acd(t.model), t.rng)
        }
        Stage::Absa => {
            let t = train_absa(&s, &config, &p, &TrainOptions::default()).unwrap();
            (StageModel::Absa(t.model), t.rng)
        }
    };
    Checkpoint {
        config,
        provider: ProviderSpec::HashedNgram { dim: 64, seed: 42 },
        rng: RngState::capture(&rng),
        metrics: serde_json::json!({"note": "test"}),
        model,
    }
}

#[test]
fn every_stage_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for stage in [Stage::Sentiment, Stage::Acd, Stage::Absa] {
        let c = trained(stage);
        let path = dir.path().join(format!("{stage}.bin"));
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
        assert_eq!(back.rng.restore().unwrap(), c.rng.restore().unwrap());
    }
}

#[test]
fn damage_is_reported_by_kind() {
    let bytes = trained(Stage::Absa).to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 100;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));

    let mut sum = bytes.clone();
    let last = sum.len() - 1;
    sum[last] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&sum), Err(Error::Integrity(_))));

    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]), Err(Error::Integrity(_))));
    assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Format(_))));
}

#[test]
fn loading_into_the_wrong_stage_fails() {
    let c = trained(Stage::Sentiment);
    assert!(matches!(c.clone().into_absa(), Err(Error::Usage(_))));
    assert!(matches!(c.clone().into_acd(), Err(Error::Usage(_))));
    assert!(c.into_sentiment().is_ok());
    assert!(matches!(trained(Stage::Acd).into_absa(), Err(Error::Usage(_))));
}

#[test]
fn mismatched_config_is_refused_on_save() {
    let mut c = trained(Stage::Acd);
    c.config.stage = Stage::Absa;
    assert!(matches!(c.to_bytes(), Err(Error::Usage(_))));
}
