use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SivError>;

#[derive(Debug, Error)]
pub enum SivError {
    #[error("grid size {0} is not a power of two >= 4")]
    InvalidGridSize(usize),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("cannot truncate from n={src} up to n={dst}")]
    TruncationUpward { src: usize, dst: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time grid mismatch: {0}")]
    TimeMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("transport problem rejected: {0}")]
    Transport(String),

    #[error("snapshot format error in {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SivError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SivError::Config(msg.into())
    }
}
