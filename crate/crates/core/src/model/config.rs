use crate::error::{Error, Result};

/// Shape of one transformer encoder and its heads.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub dropout: f64,
    /// MLM output projection reuses the input embedding table.
    pub tied: bool,
}

/// Fraction of selectable positions augmented per instance.
pub const MASK_PERCENT: f64 = 0.15;

impl EncoderConfig {
    /// Scaled-down version of the small pre-training shape.
    pub fn desk(vocab: usize) -> Self {
        EncoderConfig {
            layers: 4,
            hidden: 64,
            heads: 4,
            ffn: 256,
            vocab,
            seq_len: 64,
            dropout: 0.1,
            tied: true,
        }
    }

    /// Smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 2,
            ffn: 64,
            vocab: 32,
            seq_len: 12,
            dropout: 0.0,
            tied: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return bad("layers, hidden, heads and ffn must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab < 5 {
            return bad(format!("vocab {} too small", self.vocab));
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len {} < 2", self.seq_len));
        }
        Ok(())
    }

    /// Generator shape for the two-network baseline: same depth, hidden and
    /// FFN scaled by `fraction`, heads reduced so the head size is preserved
    /// where possible.
    pub fn generator(&self, fraction: f64) -> Self {
        let hidden = ((self.hidden as f64 * fraction).round() as usize).max(1);
        let ffn = ((self.ffn as f64 * fraction).round() as usize).max(1);
        let head_size = self.hidden / self.heads;
        let mut heads = (hidden / head_size).max(1);
        while !hidden.is_multiple_of(heads) {
            heads -= 1;
        }
        EncoderConfig {
            hidden,
            ffn,
            heads,
            ..self.clone()
        }
    }
}
