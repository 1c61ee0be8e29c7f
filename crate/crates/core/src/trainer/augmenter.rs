use crate::augment::{apply_augmentation, cold_start_for, select_positions, AugmentedBatch, ReplacementCache};
use crate::corpus::{TokenSequence, UnigramTable, MASK};
use crate::error::Result;
use crate::strategy::{Replacement, Strategy};

/// Builds the augmented input of a batch for a given strategy.
#[derive(Clone, Debug)]
pub struct Augmenter<'a> {
    pub strategy: Strategy,
    pub seed: u64,
    pub vocab_size: usize,
    pub table: &'a UnigramTable,
}

impl Augmenter<'_> {
    /// Input for epoch `epoch`. Self-augmenting strategies consume the cache
    /// entries written in the previous epoch. The two-network baseline gets
    /// the `[MASK]`ed generator input.
    pub fn build(&self, seqs: &[&TokenSequence], epoch: u32, cache: &mut ReplacementCache) -> Result<AugmentedBatch> {
        let k = seqs.first().map_or(0, |s| s.len());
        let instances = seqs
            .iter()
            .map(|seq| {
                let (positions, ids) = self.replacements(seq, epoch, cache)?;
                apply_augmentation(seq, &positions, &ids, self.vocab_size)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AugmentedBatch { seq_len: k, instances })
    }

    fn replacements(&self, seq: &TokenSequence, epoch: u32, cache: &mut ReplacementCache) -> Result<(Vec<usize>, Vec<u32>)> {
        let cold = || -> Result<(Vec<usize>, Vec<u32>)> {
            let s = select_positions(seq, epoch, self.seed)?;
            let ids = cold_start_for(self.table, s.positions.len(), self.seed, seq.instance_id, epoch);
            Ok((s.positions, ids))
        };
        match self.strategy.replacement() {
            Replacement::Mask | Replacement::Generator => {
                let s = select_positions(seq, epoch, self.seed)?;
                let n = s.positions.len();
                Ok((s.positions, vec![MASK; n]))
            }
            Replacement::ColdStart => cold(),
            Replacement::SelfAugment if epoch == 0 => cold(),
            Replacement::SelfAugment => {
                let e = cache.take(seq.instance_id, epoch)?;
                Ok((e.positions, e.ids))
            }
        }
    }
}
