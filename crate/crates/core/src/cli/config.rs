//! Run configuration: defaults, optional TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bow::{StemmerKind, StopwordLanguage};
use crate::corpus::SplitSpec;
use crate::error::{Error, Result};
use crate::logreg::LogRegHyper;
use crate::transformer::TrainConfig;
use crate::triage::DEFAULT_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bow,
    Transformer,
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub stopwords: StopwordLanguage,
    pub stemmer: StemmerKind,
    pub lowercase: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            stopwords: StopwordLanguage::German,
            stemmer: StemmerKind::Porter,
            lowercase: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSection {
    pub vocab_size: usize,
    pub lowercase: bool,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
}

impl Default for TransformerSection {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            lowercase: true,
            max_len: 64,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            dropout_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_docs: usize,
    pub impolite_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            impolite_fraction: 0.075,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageSection {
    pub tau: f64,
}

impl Default for TriageSection {
    fn default() -> Self {
        Self { tau: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub paths: Paths,
    pub split: SplitSpec,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub logreg: LogRegHyper,
    pub transformer: TransformerSection,
    pub train: TrainConfig,
    pub triage: TriageSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Bow,
            paths: Paths::default(),
            split: SplitSpec::default(),
            synth: SynthSection::default(),
            preprocess: PreprocessSection::default(),
            logreg: LogRegHyper::default(),
            transformer: TransformerSection::default(),
            train: TrainConfig::default(),
            triage: TriageSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}
