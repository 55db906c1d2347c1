use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("power iteration did not converge in {iterations} iterations (last residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("dimension {dim} exceeds the dense eigensolver limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("no impostors exist: dataset has a single class")]
    NoImpostors,

    #[error("empty triplet set")]
    EmptyTriplets,

    #[error("dual collapse: {0}")]
    DualCollapse(String),

    #[error("dual weight u[{index}] = {value} is outside the open interval (0, 1)")]
    DualOutOfInterior { index: usize, value: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e}, max {max_eig:.3e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("csv line {line}, column {column}: {message}")]
    Csv {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("empty dataset file")]
    EmptyFile,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model checksum mismatch (stored {stored}, computed {computed})")]
    ChecksumMismatch { stored: String, computed: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NotConverged { .. }
            | Error::DualCollapse(_)
            | Error::DualOutOfInterior { .. }
            | Error::NotPsd { .. }
            | Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
