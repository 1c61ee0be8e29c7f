//! Corpus ingestion: vocabulary and unigram statistics, fixed-length
//! encoding, the Markov oracle source, and epoch-shuffled batching.

mod batch;
mod markov;
mod sequence;
mod vocab;

pub use batch::{batch_iter, batches_per_epoch, BatchPlan};
pub use markov::MarkovOracle;
pub use sequence::{decode, encode, read_documents, write_documents, Corpus, TokenSequence};
pub use vocab::{
    is_special, tokenize, ColdStart, UnigramTable, Vocab, CLS, MASK, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK,
};
