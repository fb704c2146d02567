use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unsupported version or flags, inconsistent sizes.
    #[error("{}: format error: {message}", path.display())]
    Format { path: PathBuf, message: String },

    /// Declared payload is larger than the bytes actually present.
    #[error("{}: truncated file: expected {expected} bytes, found {actual}", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    /// Non-finite or otherwise invalid numeric payload.
    #[error("data error: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("item {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at(index: usize, source: Error) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(source),
        }
    }

    /// Innermost error, skipping index context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIndex { source, .. } => source.root(),
            other => other,
        }
    }
}
