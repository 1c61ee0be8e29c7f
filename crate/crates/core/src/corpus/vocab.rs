use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const CLS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]"];

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Token ↔ id map with corpus frequencies. Specials occupy ids 0..4.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<u64>,
}

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocab {
    /// Keep the `max_size − 4` most frequent tokens (ties broken
    /// lexicographically); everything else maps to `[UNK]`.
    pub fn build<I, S>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size < NUM_SPECIALS + 1 {
            return Err(Error::Invalid(format!("max_size {max_size} < 5")));
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(String, u64)> = freq
            .into_iter()
            .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIALS);
        let entries = SPECIAL_TOKENS
            .iter()
            .map(|s| (s.to_string(), 0))
            .chain(ranked);
        Self::from_entries(entries)
    }

    fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        let mut ids = HashMap::new();
        for (i, (tok, count)) in entries.into_iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate token {tok:?}")));
            }
            tokens.push(tok);
            counts.push(count);
        }
        let v = Vocab { tokens, ids, counts };
        v.check_specials()?;
        Ok(v)
    }

    fn check_specials(&self) -> Result<()> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if self.tokens.get(i).map(String::as_str) != Some(*s) || self.counts[i] != 0 {
                return Err(Error::Invalid(format!("special token {s} must be id {i} with count 0")));
            }
        }
        if self.tokens.len() <= NUM_SPECIALS {
            return Err(Error::Invalid("vocabulary has no ordinary tokens".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `[UNK]`.
    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Unigram probabilities over all ids; specials get 0.
    pub fn unigram_probs(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    /// One `token<TAB>count` line per id, specials first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(s, "{t}\t{c}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .map(|(n, line)| {
                let (tok, count) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Invalid(format!("vocab line {}: expected token<TAB>count", n + 1)))?;
                let count = count
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Invalid(format!("vocab line {}: {e}", n + 1)))?;
                Ok((tok.to_string(), count))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Context-free replacement distribution over non-special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum ColdStart {
    #[default]
    Unigram,
    Uniform,
}

impl std::str::FromStr for ColdStart {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unigram" => Ok(ColdStart::Unigram),
            "uniform" => Ok(ColdStart::Uniform),
            other => Err(Error::Config(format!("unknown cold-start mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ColdStart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ColdStart::Unigram => "unigram",
            ColdStart::Uniform => "uniform",
        })
    }
}

/// Normalized distribution over token ids with a cumulative table for sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramTable {
    ids: Vec<u32>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl UnigramTable {
    pub fn new(ids: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        if ids.len() != weights.len() {
            return Err(Error::Invalid("ids and weights differ in length".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(UnigramTable { ids, probs, cdf })
    }

    pub fn from_vocab(vocab: &Vocab, mode: &ColdStart) -> Result<Self> {
        let ids: Vec<u32> = (NUM_SPECIALS as u32..vocab.len() as u32).collect();
        let weights = match mode {
            ColdStart::Unigram => ids.iter().map(|&i| vocab.count(i) as f64).collect(),
            ColdStart::Uniform => vec![1.0; ids.len()],
        };
        Self::new(ids, weights)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Token id for a uniform variate `u` in [0,1).
    pub fn draw(&self, u: f64) -> u32 {
        let target = u * self.cdf.last().copied().unwrap_or(1.0);
        let mut i = self.cdf.partition_point(|&c| c <= target).min(self.ids.len() - 1);
        while self.probs[i] == 0.0 && i > 0 {
            i -= 1;
        }
        self.ids[i]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}
