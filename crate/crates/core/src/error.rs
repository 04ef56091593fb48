use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the market simulator and its numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid bid matrix: {0}")]
    InvalidBids(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("empty label mask")]
    EmptyMask,

    #[error("label {label} is not in the model's active label set")]
    LabelNotActive { label: usize },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("class {class} is active in the student but covered by no teacher")]
    OrphanClass { class: usize },

    #[error("{what} has {got} elements, limit is {limit}")]
    GuardExceeded { what: &'static str, got: usize, limit: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
