//! MLM and RTD losses, their weighted combination and the λ schedule.
//!
//! Both losses are means: per instance over its positions, then over the
//! batch. MLM averages over augmented positions, RTD over real (non-pad)
//! positions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::kernels::{softplus, LOGIT_CLAMP};
use crate::numerics::{Scalar, Tape, Var};

/// Weight of the RTD loss as a function of the epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// `start + (end − start) · t / (epochs − 1)`, fixed within an epoch.
    EpochLinear { start: f64, end: f64, epochs: u32 },
}

impl LambdaSchedule {
    pub fn value(&self, epoch: u32) -> f64 {
        match *self {
            LambdaSchedule::Constant(v) => v,
            LambdaSchedule::EpochLinear { start, end, epochs } => {
                if epochs <= 1 {
                    start
                } else {
                    let t = epoch.min(epochs - 1) as f64;
                    start + (end - start) * t / (epochs - 1) as f64
                }
            }
        }
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSchedule::Constant(v) => write!(f, "constant:{v}"),
            LambdaSchedule::EpochLinear { start, end, .. } => write!(f, "linear:{start}:{end}"),
        }
    }
}

/// Parses `constant:V` or `linear:START:END`; the epoch count is filled in
/// by the caller through [`LambdaSchedule::with_epochs`].
impl FromStr for LambdaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad lambda value {x:?}")))
        };
        match parts.as_slice() {
            ["constant", v] => Ok(LambdaSchedule::Constant(num(v)?)),
            ["linear", a, b] => Ok(LambdaSchedule::EpochLinear {
                start: num(a)?,
                end: num(b)?,
                epochs: 1,
            }),
            _ => Err(Error::Config(format!("bad lambda schedule {s:?}"))),
        }
    }
}

impl LambdaSchedule {
    pub fn with_epochs(self, epochs: u32) -> Self {
        match self {
            LambdaSchedule::EpochLinear { start, end, .. } => LambdaSchedule::EpochLinear { start, end, epochs },
            c => c,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mlm_loss: f64,
    pub rtd_loss: f64,
    pub lambda: f64,
    pub total: f64,
    /// Set when no instance in the batch had an augmented position.
    pub empty_positions: bool,
}

/// `total = mlm + λ · rtd`.
pub fn combined_loss(mlm_loss: f64, rtd_loss: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        mlm_loss,
        rtd_loss,
        lambda,
        total: mlm_loss + lambda * rtd_loss,
        empty_positions: false,
    }
}

/// Row weights for the MLM loss: `1 / (|S_b| · B')` where `B'` counts
/// instances with at least one position. The flag is set when `B' = 0`.
pub fn mlm_weights(positions: &[Vec<usize>]) -> (Vec<f64>, bool) {
    let nonempty = positions.iter().filter(|s| !s.is_empty()).count();
    if nonempty == 0 {
        return (vec![], true);
    }
    let w = positions
        .iter()
        .flat_map(|s| std::iter::repeat_n(1.0 / (s.len() * nonempty) as f64, s.len()))
        .collect();
    (w, false)
}

/// Position weights for the RTD loss over a flattened `[batch, k]` mask:
/// `1 / (n_b · B)` at real positions, zero at padding.
pub fn rtd_weights(pad_mask: &[bool], k: usize) -> Vec<f64> {
    let batch = pad_mask.len() / k.max(1);
    pad_mask
        .chunks(k)
        .flat_map(|row| {
            let n = row.iter().filter(|&&m| m).count();
            row.iter()
                .map(move |&m| if m && n > 0 { 1.0 / (n * batch) as f64 } else { 0.0 })
        })
        .collect()
}

/// MLM loss from the log-probabilities assigned to the targets, grouped by
/// instance. Returns the loss and the empty flag.
pub fn mlm_loss(target_log_probs: &[Vec<f64>]) -> (f64, bool) {
    let groups: Vec<&Vec<f64>> = target_log_probs.iter().filter(|g| !g.is_empty()).collect();
    if groups.is_empty() {
        return (0.0, true);
    }
    let sum: f64 = groups
        .iter()
        .map(|g| -g.iter().sum::<f64>() / g.len() as f64)
        .sum();
    (sum / groups.len() as f64, false)
}

/// Binary cross-entropy from probabilities `D` (clamped to the sigmoid range
/// at ±30), averaged over real positions per instance, then over the batch.
pub fn rtd_loss(d: &[f64], labels: &[bool], pad_mask: &[bool], k: usize) -> f64 {
    let lo = 1.0 / (1.0 + LOGIT_CLAMP.exp());
    let w = rtd_weights(pad_mask, k);
    d.iter()
        .zip(labels)
        .zip(&w)
        .filter(|(_, &w)| w > 0.0)
        .map(|((&p, &y), &w)| {
            let p = p.clamp(lo, 1.0 - lo);
            -w * if y { p.ln() } else { (1.0 - p).ln() }
        })
        .sum()
}

/// RTD loss from logits (matches the tape computation exactly).
pub fn rtd_loss_logits(z: &[f64], labels: &[bool], pad_mask: &[bool], k: usize) -> f64 {
    let w = rtd_weights(pad_mask, k);
    z.iter()
        .zip(labels)
        .zip(&w)
        .filter(|(_, &w)| w > 0.0)
        .map(|((&z, &y), &w)| {
            let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            w * if y { softplus(-z) } else { softplus(z) }
        })
        .sum()
}

/// MLM loss node on the tape: `logp` rows align with `targets`, grouped by
/// `positions` per instance.
pub fn mlm_loss_node<T: Scalar>(
    tape: &mut Tape<T>,
    logp: Var,
    targets: &[u32],
    positions: &[Vec<usize>],
) -> Result<(Var, bool)> {
    let (w, empty) = mlm_weights(positions);
    if empty {
        return Ok((tape.constant(crate::numerics::Tensor::scalar(T::zero())), true));
    }
    let w: Vec<T> = w.into_iter().map(T::of).collect();
    Ok((tape.weighted_nll(logp, targets, &w)?, false))
}

/// RTD loss node on the tape from logits at every position.
pub fn rtd_loss_node<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[bool], pad_mask: &[bool], k: usize) -> Result<Var> {
    let w: Vec<T> = rtd_weights(pad_mask, k).into_iter().map(T::of).collect();
    let y: Vec<T> = labels.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    tape.weighted_bce_logits(logits, &y, &w)
}

/// `mlm + λ · rtd` on the tape.
pub fn combined_node<T: Scalar>(tape: &mut Tape<T>, mlm: Var, rtd: Var, lambda: f64) -> Result<Var> {
    let r = tape.scale(rtd, T::of(lambda));
    tape.add(mlm, r)
}
