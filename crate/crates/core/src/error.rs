use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("sequence of {len} tokens exceeds the context length {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("character {0:?} is not in the tokenizer alphabet")]
    UnmappedChar(char),

    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownToken { id: u32, size: usize },

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("target item {0} is not part of the candidate batch")]
    TargetNotInBatch(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("item embedding table is stale (built under params version {table}, current version {params})")]
    StaleTable { table: u64, params: u64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("plotting failed: {0}")]
    Plot(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
