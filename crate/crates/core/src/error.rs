use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PctmError>;

#[derive(Debug, Error)]
pub enum PctmError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("citation ({citing_doc}, {paragraph}, {cited_doc}) violates temporal order: cited document must precede the citing document")]
    TemporalViolation {
        citing_doc: usize,
        paragraph: usize,
        cited_doc: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("inconsistent state: {0}")]
    Inconsistent(String),

    #[error("internal corruption: {0}")]
    Corruption(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PctmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PctmError::Io {
            path: path.into(),
            source,
        }
    }
}
