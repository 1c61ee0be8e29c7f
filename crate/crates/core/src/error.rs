use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("position {pos} out of range for sequence of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("no selectable positions in instance {0}")]
    NoSelectablePositions(u64),

    #[error("distribution has no mass")]
    ZeroMass,

    #[error("row {row} of transition matrix is not stochastic (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("double write: cache already holds an entry for instance {instance} at epoch {epoch}")]
    DoubleWrite { instance: u64, epoch: u32 },

    #[error("cache miss: no replacement entry for instance {instance} at epoch {epoch}")]
    CacheMiss { instance: u64, epoch: u32 },

    #[error("non-finite loss at step {step}: mlm={mlm} rtd={rtd}")]
    NonFiniteLoss { step: u64, mlm: f64, rtd: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
