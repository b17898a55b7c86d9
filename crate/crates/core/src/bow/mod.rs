//! Bag-of-words baseline features.
//!
//! Texts are lowercased, stripped of punctuation, split on whitespace, filtered
//! against a stopword list and stemmed. A [`FrequencyTable`] counts how often
//! each token occurs in polite and in impolite training documents; a text is
//! then summarized by two sum scores ([`BowFeatures`]).

pub mod porter;
pub mod stopwords;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, IMPOLITE, POLITE};

pub use stopwords::StopwordLanguage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StemmerKind {
    Porter,
    Identity,
}

impl StemmerKind {
    pub fn stem(self, word: &str) -> String {
        match self {
            StemmerKind::Porter => porter::stem(word),
            StemmerKind::Identity => word.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub stopwords: BTreeSet<String>,
    pub lowercase: bool,
    pub stemmer: StemmerKind,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::for_language(StopwordLanguage::German)
    }
}

impl PreprocessConfig {
    pub fn for_language(language: StopwordLanguage) -> Self {
        Self {
            stopwords: language.words(),
            lowercase: true,
            stemmer: StemmerKind::Porter,
        }
    }

    pub fn with_stopwords<I, S>(words: I, stemmer: StemmerKind) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            stopwords: words
                .into_iter()
                .map(Into::into)
                .filter(|w: &String| !w.is_empty())
                .collect(),
            lowercase: true,
            stemmer,
        }
    }

    fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token) || (!self.lowercase && self.stopwords.contains(&token.to_lowercase()))
    }
}

/// Tokenizes, removes stopwords and stems. Order and duplicates are preserved.
pub fn preprocess(text: &str, cfg: &PreprocessConfig) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let cleaned = if cfg.lowercase {
        cleaned.to_lowercase()
    } else {
        cleaned
    };
    cleaned
        .split_whitespace()
        .filter(|t| !cfg.is_stopword(t))
        .map(|t| cfg.stemmer.stem(t))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Token occurrence counts per label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: BTreeMap<(String, u8), u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub token: String,
    pub label: u8,
    pub count: u64,
}

impl FrequencyTable {
    pub fn count(&self, token: &str, label: u8) -> u64 {
        // BTreeMap needs an owned key for tuple lookup.
        self.counts.get(&(token.to_string(), label)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self, label: u8) -> u64 {
        self.counts
            .iter()
            .filter(|((_, y), _)| *y == label)
            .map(|(_, c)| *c)
            .sum()
    }

    fn add(&mut self, token: String, label: u8) {
        *self.counts.entry((token, label)).or_insert(0) += 1;
    }

    /// Records sorted by (token, label).
    pub fn records(&self) -> Vec<FrequencyRecord> {
        self.counts
            .iter()
            .map(|((token, label), count)| FrequencyRecord {
                token: token.clone(),
                label: *label,
                count: *count,
            })
            .collect()
    }

    pub fn from_records(records: impl IntoIterator<Item = FrequencyRecord>) -> crate::Result<Self> {
        let mut counts = BTreeMap::new();
        for r in records {
            if r.count == 0 || r.label > 1 {
                return Err(crate::Error::InvalidArgument(format!(
                    "invalid frequency record {:?}/{}/{}",
                    r.token, r.label, r.count
                )));
            }
            counts.insert((r.token, r.label), r.count);
        }
        Ok(Self { counts })
    }
}

impl Serialize for FrequencyTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.records().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FrequencyTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<FrequencyRecord>::deserialize(deserializer)?;
        FrequencyTable::from_records(records).map_err(serde::de::Error::custom)
    }
}

/// Counts token occurrences per label over the training documents.
pub fn build_freqs(train: &Corpus, cfg: &PreprocessConfig) -> FrequencyTable {
    let mut table = FrequencyTable::default();
    for doc in train.documents() {
        for token in preprocess(&doc.text, cfg) {
            table.add(token, doc.label);
        }
    }
    table
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowFeatures {
    pub polite_sum: u64,
    pub impolite_sum: u64,
}

impl BowFeatures {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.polite_sum as f64, self.impolite_sum as f64]
    }
}

impl std::ops::Add for BowFeatures {
    type Output = BowFeatures;

    fn add(self, rhs: Self) -> Self {
        BowFeatures {
            polite_sum: self.polite_sum + rhs.polite_sum,
            impolite_sum: self.impolite_sum + rhs.impolite_sum,
        }
    }
}

/// Sums the per-label table counts over every token occurrence in `text`.
pub fn extract_features(text: &str, freqs: &FrequencyTable, cfg: &PreprocessConfig) -> BowFeatures {
    preprocess(text, cfg)
        .iter()
        .fold(BowFeatures::default(), |acc, t| BowFeatures {
            polite_sum: acc.polite_sum + freqs.count(t, POLITE),
            impolite_sum: acc.impolite_sum + freqs.count(t, IMPOLITE),
        })
}

/// Feature matrix (one `[polite_sum, impolite_sum]` row per document).
pub fn feature_matrix(corpus: &Corpus, freqs: &FrequencyTable, cfg: &PreprocessConfig) -> Vec<Vec<f64>> {
    corpus
        .documents()
        .iter()
        .map(|d| extract_features(&d.text, freqs, cfg).to_vec())
        .collect()
}
