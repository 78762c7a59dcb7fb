//! Seeded synthetic review corpus.
//!
//! (aspect, sentiment) pairs are drawn i.i.d. from the label distribution
//! of the accommodation-review dataset below and packed into reviews. Each
//! labeled pair becomes a clause `<aspect keyword> <polarity word>`, so both
//! labels are recoverable from surface features; noise words separate the
//! clauses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::normalize::normalize_text;
use super::record::{Aspect, ReviewRecord, Sentiment};

/// Label counts per aspect as `[negative, neutral, positive]`.
pub const LABEL_COUNTS: [(Aspect, [u32; 3]); 6] = [
    (Aspect::Price, [579, 40, 128]),
    (Aspect::Amenities, [1508, 73, 621]),
    (Aspect::Host, [188, 15, 1064]),
    (Aspect::Location, [187, 10, 411]),
    (Aspect::Cleanliness, [359, 30, 839]),
    (Aspect::Connectivity, [580, 40, 129]),
];

pub const DEFAULT_MULTI_ASPECT_PROB: f64 = 0.25;

fn keywords(a: Aspect) -> &'static [&'static str] {
    match a {
        Aspect::Host => &["میزبان", "صاحبخانه", "مالک", "پذیرش"],
        Aspect::Price => &["قیمت", "هزینه", "اجاره", "کرایه"],
        Aspect::Location => &["موقعیت", "محله", "منطقه", "چشم‌انداز"],
        Aspect::Amenities => &["امکانات", "آشپزخانه", "استخر", "پارکینگ"],
        Aspect::Cleanliness => &["نظافت", "تمیزی", "بهداشت", "ملحفه"],
        Aspect::Connectivity => &["اینترنت", "وای‌فای", "آنتن", "شبکه"],
    }
}

fn polarity_words(s: Sentiment) -> &'static [&'static str] {
    match s {
        Sentiment::Negative => &["افتضاح", "ضعیف", "بد", "ناامیدکننده"],
        Sentiment::Neutral => &["معمولی", "متوسط", "قابل‌قبول", "عادی"],
        Sentiment::Positive => &["عالی", "خوب", "بی‌نظیر", "رضایت‌بخش"],
    }
}

const NOISE_WORDS: &[&str] = &[
    "و", "سفر", "ما", "این", "بود", "خیلی", "هم", "برای", "شب", "اقامت", "ویلا", "دوستان",
    "تعطیلات", "روز",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_records: usize,
    pub multi_aspect_prob: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n_records: usize) -> Self {
        Self {
            seed,
            n_records,
            multi_aspect_prob: DEFAULT_MULTI_ASPECT_PROB,
        }
    }
}

/// Joint probability of every `(aspect, sentiment)` cell.
pub fn label_proportions() -> Vec<((Aspect, Sentiment), f64)> {
    let total: u32 = LABEL_COUNTS.iter().flat_map(|(_, c)| c.iter()).sum();
    LABEL_COUNTS
        .iter()
        .flat_map(|(a, counts)| {
            Sentiment::ALL
                .iter()
                .zip(counts)
                .map(move |(s, &c)| ((*a, *s), f64::from(c) / f64::from(total)))
        })
        .collect()
}

pub fn synth_corpus(seed: u64, n_records: usize) -> Vec<ReviewRecord> {
    synth_with(&SynthConfig::new(seed, n_records))
}

pub fn synth_with(cfg: &SynthConfig) -> Vec<ReviewRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cells = label_proportions();
    let cumulative: Vec<f64> = cells
        .iter()
        .scan(0.0, |acc, (_, p)| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen();
        let i = cumulative.partition_point(|&c| c <= u).min(cells.len() - 1);
        cells[i].0
    };

    // Pairs come from one i.i.d. stream; a second pair that repeats the
    // first aspect opens the next review instead of being discarded.
    let mut carry: Option<(Aspect, Sentiment)> = None;
    let mut out = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let first = carry.take().unwrap_or_else(|| draw(&mut rng));
        let mut pairs = vec![first];
        if rng.gen_bool(cfg.multi_aspect_prob.clamp(0.0, 1.0)) {
            let second = draw(&mut rng);
            if second.0 == first.0 {
                carry = Some(second);
            } else {
                pairs.push(second);
            }
        }
        let text = compose(&pairs, &mut rng);
        let mut rec = ReviewRecord::new(format!("s{i:06}"), text);
        for (a, s) in pairs {
            rec.insert_label(a, s);
        }
        out.push(rec);
    }
    out
}

fn compose(pairs: &[(Aspect, Sentiment)], rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = Vec::new();
    let noise = |words: &mut Vec<&str>, lo: usize, hi: usize, rng: &mut ChaCha8Rng| {
        for _ in 0..rng.gen_range(lo..=hi) {
            words.push(NOISE_WORDS.choose(rng).expect("non-empty"));
        }
    };
    noise(&mut words, 0, 2, rng);
    for (k, (a, s)) in pairs.iter().enumerate() {
        if k > 0 {
            noise(&mut words, 1, 2, rng);
        }
        words.push(keywords(*a).choose(rng).expect("non-empty"));
        words.push(polarity_words(*s).choose(rng).expect("non-empty"));
    }
    noise(&mut words, 0, 2, rng);
    normalize_text(&words.join(" "))
}
