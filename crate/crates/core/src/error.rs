use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("philox rounds must be in 1..=16, got {0}")]
    InvalidRounds(u32),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("keep probability must be in [0, 1], got {0}")]
    InvalidKeepProb(f64),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("mask needs {required} bytes but the capacity guard allows {allowed} bytes")]
    CapacityExceeded { required: u64, allowed: u64 },

    #[error("mask file: {0}")]
    MaskFormat(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("{what} does not divide {value} (got {divisor})")]
    NotDivisible {
        what: &'static str,
        value: u64,
        divisor: u64,
    },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input rather than an internal fault.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
