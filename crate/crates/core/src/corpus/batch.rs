use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Epoch-dependent shuffled order of instance indices, chunked into batches.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Batches of corpus indices; the last one may be short.
    pub fn iter(&self) -> std::slice::Chunks<'_, usize> {
        self.order.chunks(self.batch_size)
    }
}

/// Deterministic shuffle keyed by `(seed, epoch)`; every instance appears
/// exactly once per epoch.
pub fn batch_iter(corpus_len: usize, batch_size: usize, epoch: u32, seed: u64) -> Result<BatchPlan> {
    if batch_size < 1 {
        return Err(Error::Invalid("batch_size must be at least 1".into()));
    }
    if corpus_len == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..corpus_len).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
    Ok(BatchPlan { order, batch_size })
}

pub fn batches_per_epoch(corpus_len: usize, batch_size: usize) -> usize {
    corpus_len.div_ceil(batch_size.max(1))
}
