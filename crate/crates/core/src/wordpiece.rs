//! WordPiece subword tokenization.
//!
//! Text is split on whitespace with every punctuation character standing
//! alone; each word is then segmented greedily, always taking the longest
//! vocabulary entry that matches at the current position (continuation pieces
//! carry a `##` prefix). A word that cannot be segmented becomes a single
//! `[UNK]`. Vocabulary files hold one token per line, line number = id, so
//! existing WordPiece vocabulary files load unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pad_id: u32,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
    lowercase: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens ordered by id.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t == CONTINUATION {
                return Err(Error::Vocab(format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?} at id {i}")));
            }
        }
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Vocab(format!("missing special token {name}")))
        };
        Ok(Self {
            pad_id: find(PAD)?,
            unk_id: find(UNK)?,
            cls_id: find(CLS)?,
            sep_id: find(SEP)?,
            tokens,
            index,
            lowercase: false,
        })
    }

    /// Lowercases text before pre-tokenization (off by default).
    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect::<Vec<_>>();
        // A trailing newline produces one empty final entry.
        let tokens = match tokens.split_last() {
            Some((last, rest)) if last.is_empty() => rest.to_vec(),
            _ => tokens,
        };
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }

    fn is_special(&self, id: u32) -> bool {
        id == self.pad_id || id == self.unk_id || id == self.cls_id || id == self.sep_id
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Whitespace split with punctuation characters emitted as their own words.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Greedy longest-match-first segmentation of one word; `None` if some
/// position has no matching piece.
pub fn segment_word(word: &str, vocab: &Vocabulary) -> Option<Vec<u32>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while start < end {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        pieces.push(found?);
        start = end;
    }
    Some(pieces)
}

/// Token ids for `text` without special tokens.
pub fn encode(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    let text = if vocab.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    pre_tokenize(&text)
        .iter()
        .flat_map(|w| segment_word(w, vocab).unwrap_or_else(|| vec![vocab.unk_id]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

impl Encoding {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Checks the positional layout: CLS first, SEP last real position,
    /// PAD with mask 0 afterwards.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let n = self.ids.len();
        let bad = |m: &str| Err(Error::Shape(format!("invalid encoding: {m}")));
        if self.attention_mask.len() != n {
            return bad("mask length differs from ids");
        }
        if self.true_length < 2 || self.true_length > n {
            return bad("true length out of range");
        }
        if self.ids[0] != vocab.cls_id() || self.ids[self.true_length - 1] != vocab.sep_id() {
            return bad("missing CLS/SEP");
        }
        for i in 0..n {
            let real = i < self.true_length;
            if self.attention_mask[i] != u8::from(real) {
                return bad("mask does not match true length");
            }
            if !real && self.ids[i] != vocab.pad_id() {
                return bad("non-PAD id after true length");
            }
        }
        Ok(())
    }
}

/// `[CLS] + encode(text)[..max_len-2] + [SEP]`, padded with `[PAD]` to `max_len`.
pub fn encode_padded(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<Encoding> {
    if max_len < 3 {
        return Err(Error::InvalidArgument(format!("max_len {max_len} must be at least 3")));
    }
    let mut content = encode(text, vocab);
    content.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id);
    ids.extend(content);
    ids.push(vocab.sep_id);
    let true_length = ids.len();
    ids.resize(max_len, vocab.pad_id);
    let attention_mask = (0..max_len).map(|i| u8::from(i < true_length)).collect();
    Ok(Encoding {
        ids,
        attention_mask,
        true_length,
    })
}

/// Joins pieces back into text. `[PAD]`, `[CLS]` and `[SEP]` are dropped;
/// `[UNK]` is kept verbatim.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let token = vocab
            .token(id)
            .ok_or_else(|| Error::Vocab(format!("unknown token id {id}")))?;
        if vocab.is_special(id) && id != vocab.unk_id {
            continue;
        }
        match token.strip_prefix(CONTINUATION) {
            Some(rest) if id != vocab.unk_id => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
    }
    Ok(out)
}

/// Builds a vocabulary from a corpus.
///
/// Layout: the four specials (ids 0-3), then every character of the corpus
/// alphabet in word-initial form, then the same characters in `##` form,
/// then the most frequent multi-character whole words and `##` suffix pieces
/// until `target_size` is reached. Ties are broken lexicographically.
pub fn build_vocab(corpus: &Corpus, target_size: usize, lowercase: bool) -> Result<Vocabulary> {
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus.documents() {
        let text = if lowercase {
            doc.text.to_lowercase()
        } else {
            doc.text.clone()
        };
        for w in pre_tokenize(&text) {
            *word_counts.entry(w).or_insert(0) += 1;
        }
    }
    let alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let base = 4 + 2 * alphabet.len();
    if target_size < base {
        return Err(Error::Vocab(format!(
            "target size {target_size} is below the {base} entries needed for specials and the alphabet"
        )));
    }
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    tokens.extend(alphabet.iter().map(|c| format!("{CONTINUATION}{c}")));

    let mut candidates: BTreeMap<String, u64> = BTreeMap::new();
    for (word, &count) in &word_counts {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() >= 2 {
            *candidates.entry(word.clone()).or_insert(0) += count;
        }
        for start in 1..chars.len().saturating_sub(1) {
            let piece: String = chars[start..].iter().collect();
            *candidates.entry(format!("{CONTINUATION}{piece}")).or_insert(0) += count;
        }
    }
    let mut ranked: Vec<(String, u64)> = candidates.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    tokens.extend(ranked.into_iter().take(target_size - base).map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(tokens)?.with_lowercase(lowercase))
}
