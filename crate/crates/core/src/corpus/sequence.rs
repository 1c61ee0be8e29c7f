use std::path::Path;

use super::vocab::{tokenize, Vocab, CLS, PAD};
use crate::error::{Error, Result};

/// Fixed-length encoded instance. `pad_mask[i]` is true for real tokens
/// (including the leading `[CLS]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub instance_id: u64,
    pub ids: Vec<u32>,
    pub pad_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions eligible for augmentation: real tokens other than `[CLS]`.
    pub fn selectable(&self) -> Vec<usize> {
        (0..self.ids.len())
            .filter(|&i| self.pad_mask[i] && self.ids[i] != CLS)
            .collect()
    }

    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// `[CLS]` followed by word ids, truncated or `[PAD]`-padded to `k`.
pub fn encode(text: &str, vocab: &Vocab, k: usize, instance_id: u64) -> Result<TokenSequence> {
    if k < 2 {
        return Err(Error::Invalid(format!("sequence length {k} < 2")));
    }
    let mut ids = Vec::with_capacity(k);
    ids.push(CLS);
    ids.extend(tokenize(text).take(k - 1).map(|t| vocab.id(&t)));
    let real = ids.len();
    ids.resize(k, PAD);
    let pad_mask = (0..k).map(|i| i < real).collect();
    Ok(TokenSequence {
        instance_id,
        ids,
        pad_mask,
    })
}

/// Word tokens of an encoded sequence (no `[CLS]`, no padding).
pub fn decode<'v>(seq: &TokenSequence, vocab: &'v Vocab) -> Vec<&'v str> {
    seq.ids
        .iter()
        .zip(&seq.pad_mask)
        .filter(|(&id, &m)| m && id != CLS)
        .map(|(&id, _)| vocab.token(id))
        .collect()
}

/// In-memory store of encoded instances; `instance_id` is the document index.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub sequences: Vec<TokenSequence>,
}

impl Corpus {
    pub fn encode<S: AsRef<str>>(docs: &[S], vocab: &Vocab, k: usize) -> Result<Self> {
        let sequences = docs
            .iter()
            .enumerate()
            .map(|(i, d)| encode(d.as_ref(), vocab, k, i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, TokenSequence::len)
    }
}

/// One document per non-empty line.
pub fn read_documents(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_documents<S: AsRef<str>>(path: &Path, docs: &[S]) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(d.as_ref());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
