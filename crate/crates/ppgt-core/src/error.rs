//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected dimension {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty attention row {row}: every entry is masked out")]
    EmptyAttentionRow { row: usize },

    #[error("zero-norm {which} row {row}: cosine similarity undefined")]
    ZeroNormRow { which: &'static str, row: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },

    #[error("tensor is not attached to a tape")]
    DetachedTape,

    #[error("operands live on different tapes")]
    TapeMismatch,

    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },

    #[error("non-finite value at coordinate {coordinate} during gradient check")]
    NonFiniteGradCheck { coordinate: usize },

    #[error("invalid edge ({u}, {v}) for graph with {n} nodes")]
    InvalidEdge { u: usize, v: usize, n: usize },

    #[error("permutation {perm:?} is not a bijection on 0..{n}")]
    InvalidPermutation { perm: Vec<usize>, n: usize },

    #[error("degenerate batch: batch normalization in training mode needs at least 2 rows, got {got}")]
    DegenerateBatch { got: usize },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("training diverged: loss is not finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown pair {0:?}; known pairs: {1}")]
    UnknownPair(String, String),

    #[error("malformed graph file: {0}")]
    GraphFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
