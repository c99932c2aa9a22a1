//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide error enum.
#[derive(Debug, Error)]
pub enum Error {
    /// An operator definition is structurally invalid (wrong matrix shapes,
    /// unsupported dimensions, bad builtin parameters).
    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Dimensions of two objects that must agree do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The symbol rank is not constant over the sampled directions, so the
    /// per-frequency projector is not well defined.
    #[error("constant-rank check failed: rank {min_rank}..{max_rank} over samples")]
    NotConstantRank { min_rank: usize, max_rank: usize },

    /// A grid frequency produced a nullspace of unexpected dimension while
    /// building a projector plan.
    #[error("rank violation at frequency {frequency:?}: nullspace dim {got}, expected {expected}")]
    RankViolationAtFrequency {
        frequency: Vec<i64>,
        got: usize,
        expected: usize,
    },

    /// Numerical failure (non-finite values, divergence) with diagnostics.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Input document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
