use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The six review aspect categories, in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Host,
    Price,
    Location,
    Amenities,
    Cleanliness,
    Connectivity,
}

impl Aspect {
    pub const ALL: [Aspect; 6] = [
        Aspect::Host,
        Aspect::Price,
        Aspect::Location,
        Aspect::Amenities,
        Aspect::Cleanliness,
        Aspect::Connectivity,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Aspect> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Host => "host",
            Aspect::Price => "price",
            Aspect::Location => "location",
            Aspect::Amenities => "amenities",
            Aspect::Cleanliness => "cleanliness",
            Aspect::Connectivity => "connectivity",
        }
    }

    /// Canonical Persian surface form, used for aspect embeddings.
    pub fn persian(self) -> &'static str {
        match self {
            Aspect::Host => "میزبان",
            Aspect::Price => "قیمت",
            Aspect::Location => "موقعیت",
            Aspect::Amenities => "امکانات",
            Aspect::Cleanliness => "نظافت",
            Aspect::Connectivity => "اینترنت",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// Persian label spellings accepted on input alongside the English names.
const PERSIAN_ASPECT_LABELS: &[(&str, Aspect)] = &[
    ("میزبان", Aspect::Host),
    ("قیمت", Aspect::Price),
    ("موقعیت", Aspect::Location),
    ("مکان", Aspect::Location),
    ("امکانات", Aspect::Amenities),
    ("نظافت", Aspect::Cleanliness),
    ("تمیزی", Aspect::Cleanliness),
    ("اینترنت", Aspect::Connectivity),
    ("ارتباطات", Aspect::Connectivity),
];

const PERSIAN_SENTIMENT_LABELS: &[(&str, Sentiment)] = &[
    ("منفی", Sentiment::Negative),
    ("خنثی", Sentiment::Neutral),
    ("مثبت", Sentiment::Positive),
];

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        if let Some(a) = Aspect::ALL.iter().find(|a| a.name() == lower) {
            return Ok(*a);
        }
        let t = crate::text::normalize::map_arabic_letters(t);
        PERSIAN_ASPECT_LABELS
            .iter()
            .find(|(label, _)| *label == t)
            .map(|(_, a)| *a)
            .ok_or_else(|| Error::Usage(format!("unknown aspect {s:?}")))
    }
}

/// Sentiment polarity; the discriminant is the class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Sentiment> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        if let Some(v) = Sentiment::ALL.iter().find(|v| v.name() == lower) {
            return Ok(*v);
        }
        PERSIAN_SENTIMENT_LABELS
            .iter()
            .find(|(label, _)| *label == t)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Usage(format!("unknown sentiment {s:?}")))
    }
}

/// One review with its aspect categories and per-aspect sentiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub id: String,
    pub text: String,
    pub aspects: BTreeSet<Aspect>,
    pub sentiments: BTreeMap<Aspect, Sentiment>,
    pub overall_sentiment: Option<Sentiment>,
}

impl ReviewRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            aspects: BTreeSet::new(),
            sentiments: BTreeMap::new(),
            overall_sentiment: None,
        }
    }

    /// Adds an aspect with its sentiment and refreshes the overall label.
    pub fn with_label(mut self, aspect: Aspect, sentiment: Sentiment) -> Self {
        self.insert_label(aspect, sentiment);
        self
    }

    pub fn insert_label(&mut self, aspect: Aspect, sentiment: Sentiment) {
        self.aspects.insert(aspect);
        self.sentiments.insert(aspect, sentiment);
        self.overall_sentiment = derived_overall(&self.sentiments);
    }

    /// `(aspect, sentiment)` triples of this review, in aspect order.
    pub fn triples(&self) -> impl Iterator<Item = (Aspect, Sentiment)> + '_ {
        self.sentiments.iter().map(|(a, s)| (*a, *s))
    }
}

/// The overall sentiment of a review is defined when every labeled aspect
/// agrees on one polarity.
pub fn derived_overall(sentiments: &BTreeMap<Aspect, Sentiment>) -> Option<Sentiment> {
    let mut it = sentiments.values();
    let first = *it.next()?;
    it.all(|s| *s == first).then_some(first)
}
