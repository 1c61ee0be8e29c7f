//! Position selection, replacement sampling, label assignment and the
//! cross-epoch replacement cache.

mod cache;


pub use cache::{CacheEntry, ReplacementCache};

use rand::seq::index;
use rand::Rng;

use crate::corpus::{is_special, TokenSequence, UnigramTable};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{pick_weighted, stream_rng, Stream};

/// Number of augmented positions for `k_eff` selectable positions:
/// `⌈0.15 · k_eff⌉`, computed in integers.
pub fn budget(k_eff: usize) -> usize {
    (15 * k_eff).div_ceil(100)
}

/// Sorted distinct positions chosen for one instance in one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionSet {
    pub instance_id: u64,
    pub epoch: u32,
    pub positions: Vec<usize>,
}

/// Uniform sample without replacement of `budget(k_eff)` selectable positions,
/// fixed by `(seed, instance_id, epoch)`.
pub fn select_positions(seq: &TokenSequence, epoch: u32, seed: u64) -> Result<PositionSet> {
    let selectable = seq.selectable();
    if selectable.is_empty() {
        return Err(Error::NoSelectablePositions(seq.instance_id));
    }
    let n = budget(selectable.len());
    let mut rng = stream_rng(seed, Stream::Select, &[seq.instance_id, epoch as u64]);
    let mut positions: Vec<usize> = index::sample(&mut rng, selectable.len(), n)
        .into_iter()
        .map(|i| selectable[i])
        .collect();
    positions.sort_unstable();
    Ok(PositionSet {
        instance_id: seq.instance_id,
        epoch,
        positions,
    })
}

/// `n` i.i.d. draws from the cold-start table.
pub fn cold_start_sample<R: Rng>(table: &UnigramTable, n: usize, rng: &mut R) -> Vec<u32> {
    (0..n).map(|_| table.draw(rng.gen::<f64>())).collect()
}

/// Cold-start replacements for one instance in one epoch.
pub fn cold_start_for(table: &UnigramTable, n: usize, seed: u64, instance_id: u64, epoch: u32) -> Vec<u32> {
    let mut rng = stream_rng(seed, Stream::ColdStart, &[instance_id, epoch as u64]);
    cold_start_sample(table, n, &mut rng)
}

/// One temperature-1 categorical draw per row of `log_probs` (rows `rows`),
/// restricted to non-special tokens and renormalized over them.
pub fn sample_rows<R: Rng>(log_probs: &Tensor, rows: &[usize], rng: &mut R) -> Result<Vec<u32>> {
    rows.iter()
        .map(|&r| {
            if r >= log_probs.rows() {
                return Err(Error::PositionOutOfRange {
                    pos: r,
                    len: log_probs.rows(),
                });
            }
            let row = log_probs.row(r);
            let weights = row
                .iter()
                .enumerate()
                .map(|(id, &lp)| if is_special(id as u32) { 0.0 } else { (lp as f64).exp() });
            if weights.clone().sum::<f64>() <= 0.0 {
                return Err(Error::ZeroMass);
            }
            Ok(pick_weighted(weights, rng.gen::<f64>()) as u32)
        })
        .collect()
}

/// Draws for epoch `epoch + 1` of one instance, from the epoch-`epoch`
/// distribution; fixed by `(seed, instance_id, epoch)`.
pub fn sample_next_epoch(log_probs: &Tensor, rows: &[usize], seed: u64, instance_id: u64, epoch: u32) -> Result<Vec<u32>> {
    let mut rng = stream_rng(seed, Stream::Sample, &[instance_id, epoch as u64]);
    sample_rows(log_probs, rows, &mut rng)
}

/// One augmented instance: `x̃` equals `x` off `positions`, and
/// `labels[j]` is true exactly when `x̃_j == x_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedInstance {
    pub instance_id: u64,
    pub original: Vec<u32>,
    pub augmented: Vec<u32>,
    pub positions: Vec<usize>,
    pub labels: Vec<bool>,
    pub pad_mask: Vec<bool>,
}

impl AugmentedInstance {
    /// Positions whose token was changed.
    pub fn replaced(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &y)| !y).map(|(i, _)| i)
    }
}

pub fn apply_augmentation(
    seq: &TokenSequence,
    positions: &[usize],
    replacements: &[u32],
    vocab_size: usize,
) -> Result<AugmentedInstance> {
    if positions.len() != replacements.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_augmentation",
            lhs: vec![positions.len()],
            rhs: vec![replacements.len()],
        });
    }
    let mut augmented = seq.ids.clone();
    for (&p, &r) in positions.iter().zip(replacements) {
        if r as usize >= vocab_size {
            return Err(Error::TokenOutOfRange { id: r, vocab: vocab_size });
        }
        if p >= augmented.len() {
            return Err(Error::PositionOutOfRange {
                pos: p,
                len: augmented.len(),
            });
        }
        augmented[p] = r;
    }
    let labels = augmented.iter().zip(&seq.ids).map(|(a, b)| a == b).collect();
    Ok(AugmentedInstance {
        instance_id: seq.instance_id,
        original: seq.ids.clone(),
        augmented,
        positions: positions.to_vec(),
        labels,
        pad_mask: seq.pad_mask.clone(),
    })
}

/// Instances of one batch, all of length `seq_len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedBatch {
    pub seq_len: usize,
    pub instances: Vec<AugmentedInstance>,
}

impl AugmentedBatch {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn augmented_ids(&self) -> Vec<u32> {
        self.instances.iter().flat_map(|a| a.augmented.iter().copied()).collect()
    }

    pub fn pad_mask(&self) -> Vec<bool> {
        self.instances.iter().flat_map(|a| a.pad_mask.iter().copied()).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.instances.iter().flat_map(|a| a.labels.iter().copied()).collect()
    }

    pub fn positions(&self) -> Vec<Vec<usize>> {
        self.instances.iter().map(|a| a.positions.clone()).collect()
    }

    /// Original ids at the augmented positions, in row order.
    pub fn targets(&self) -> Vec<u32> {
        self.instances
            .iter()
            .flat_map(|a| a.positions.iter().map(|&p| a.original[p]))
            .collect()
    }
}
