//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `ESTRFMR1`, a little-endian `u64` manifest length,
//! the JSON manifest (format version, config, vocabulary, tensor names and
//! shapes), then every tensor as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TransformerConfig, TransformerParams};
use crate::error::{Error, Result};
use crate::wordpiece::Vocabulary;

const MAGIC: &[u8; 8] = b"ESTRFMR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: TransformerConfig,
    pub lowercase: bool,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(params: &TransformerParams, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    let tensors = params.tensors();
    let manifest = Manifest {
        version: FORMAT_VERSION,
        config: params.config,
        lowercase: vocab.lowercase(),
        vocab: vocab.tokens().to_vec(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let manifest = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + manifest.len() + 8 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, m) in tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(TransformerParams, Vocabulary)> {
    let err = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(err("not a transformer checkpoint"));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + manifest_len).ok_or_else(|| err("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", manifest.version)));
    }
    manifest.config.validate()?;
    let vocab = Vocabulary::from_tokens(manifest.vocab)?.with_lowercase(manifest.lowercase);
    let mut params = TransformerParams::zeros(&manifest.config);
    let mut blob = &bytes[16 + manifest_len..];
    let mut tensors = params.tensors_mut();
    if tensors.len() != manifest.tensors.len() {
        return Err(err("tensor count does not match config"));
    }
    for ((name, m), entry) in tensors.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name || m.shape() != (entry.rows, entry.cols) {
            return Err(Error::Checkpoint(format!("tensor {} does not match config", entry.name)));
        }
        let n = m.len() * 8;
        if blob.len() < n {
            return Err(err("truncated tensor data"));
        }
        for (v, chunk) in m.data_mut().iter_mut().zip(blob[..n].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        blob = &blob[n..];
    }
    drop(tensors);
    if !blob.is_empty() {
        return Err(err("trailing bytes after tensor data"));
    }
    if vocab.len() != params.config.vocab_size {
        return Err(err("vocabulary size does not match config"));
    }
    Ok((params, vocab))
}

pub fn save(path: &Path, params: &TransformerParams, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, to_bytes(params, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(TransformerParams, Vocabulary)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::init_params;
    use crate::wordpiece::{CLS, PAD, SEP, UNK};

    fn setup() -> (TransformerParams, Vocabulary) {
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend((0..6).map(|i| format!("w{i}")));
        let vocab = Vocabulary::from_tokens(tokens).unwrap();
        let mut cfg = TransformerConfig::desk_scale(10);
        cfg.max_len = 8;
        (init_params(&cfg, 4).unwrap(), vocab)
    }

    #[test]
    fn round_trip_is_exact() {
        let (params, vocab) = setup();
        let bytes = to_bytes(&params, &vocab).unwrap();
        let (p2, v2) = from_bytes(&bytes).unwrap();
        assert_eq!(p2, params);
        assert_eq!(v2, vocab);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let (params, vocab) = setup();
        let bytes = to_bytes(&params, &vocab).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(b"garbage!garbage!").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
