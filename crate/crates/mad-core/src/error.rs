//! Error type shared across the library.
//!
//! Variants are grouped by what went wrong rather than where: callers that
//! need to map errors onto coarser categories (the CLI maps them onto exit
//! codes) should use [`MadError::category`].

use thiserror::Error;

/// Everything that can fail in this crate.
#[derive(Debug, Error)]
pub enum MadError {
    /// Two tensors disagreed on shape for an elementwise or reduction op.
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Shape metadata and buffer length disagree, or a shape is empty.
    #[error("invalid tensor shape {shape:?} for buffer of length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },

    /// A non-finite value appeared where the contract requires finite ones.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A parameter name was registered twice.
    #[error("parameter {name:?} is already registered")]
    DuplicateParam { name: String },

    /// A parameter name was looked up but never registered.
    #[error("unknown parameter {name:?}")]
    UnknownParam { name: String },

    /// A node id fell outside `0..n_nodes`.
    #[error("node {node} out of range for graph with {n_nodes} nodes")]
    NodeOutOfRange { node: u32, n_nodes: usize },

    /// A reference equal to the query endpoint was requested.
    #[error("reference node {node} coincides with the query endpoint")]
    SelfReference { node: u32 },

    /// Unmasking a pair that was never masked, or masking one twice.
    #[error("memory pair ({u}, {v}) {problem}")]
    MaskState {
        u: u32,
        v: u32,
        problem: &'static str,
    },

    /// More distinct items were requested than exist.
    #[error("cannot choose {requested} distinct items from {available} candidates")]
    Infeasible { requested: usize, available: usize },

    /// An input collection that must be non-empty was empty.
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    /// A configuration value violated its documented range.
    #[error("invalid config: {0}")]
    Config(String),

    /// A line of an input file failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Rejection sampling ran out of attempts before filling its quota.
    #[error("negative sampling exhausted after {attempts} attempts ({found}/{requested} found)")]
    SamplingExhausted {
        attempts: usize,
        found: usize,
        requested: usize,
    },

    /// A split fraction produced an empty split.
    #[error("split {which} is empty ({n_edges} edges, fraction {fraction})")]
    EmptySplit {
        which: &'static str,
        n_edges: usize,
        fraction: f64,
    },

    /// A model file had the wrong magic bytes or was truncated.
    #[error("malformed model file {path}: {msg}")]
    ModelFormat { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad or unreadable input data.
    Data,
    /// A numeric contract was violated (shapes, finiteness, infeasible sizes).
    Numeric,
}

impl MadError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            MadError::Io(_)
            | MadError::Json(_)
            | MadError::Parse { .. }
            | MadError::EmptySplit { .. }
            | MadError::ModelFormat { .. }
            | MadError::EmptyInput { .. }
            | MadError::Config(_)
            | MadError::NodeOutOfRange { .. } => ErrorCategory::Data,
            _ => ErrorCategory::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, MadError>;
