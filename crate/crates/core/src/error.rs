use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numerical core, IO routines and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch of {got} rows is too small for a train-mode forward with batch norm (need at least 2)")]
    BatchTooSmall { got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("backward requires a train-mode forward cache")]
    EvalModeCache,

    #[error("forward cache does not belong to this network: {0}")]
    CacheMismatch(String),

    #[error("label row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("sampling weights are all zero")]
    ZeroWeights,

    #[error("non-finite gradient in {subnet}")]
    NonFiniteGradient { subnet: &'static str },

    #[error("non-finite loss at stage {stage}, step {step}: {detail}")]
    NonFiniteLoss {
        stage: u8,
        step: usize,
        detail: String,
    },

    #[error("NaN score at gallery index {0}")]
    NanScore(usize),

    #[error("zero-norm vector under cosine scoring")]
    ZeroNorm,

    #[error("query has no relevant gallery item; average precision is undefined")]
    NoRelevant,

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: String },

    #[error("{path}: unsupported version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file (needed {needed} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("{path}: header inconsistent with payload: {detail}")]
    HeaderInconsistent { path: PathBuf, detail: String },

    #[error("{path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::NanScore(_) | Error::ZeroNorm
        )
    }

    /// True for filesystem and file-format failures.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::HeaderInconsistent { .. }
                | Error::Manifest { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
