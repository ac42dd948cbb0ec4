use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("model {index}: {source}")]
    Model {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    FormatVersion {
        kind: String,
        found: u32,
        expected: u32,
    },

    #[error("wrong document kind: expected `{expected}`, found `{found}`")]
    Kind { expected: String, found: String },

    #[error("checksum mismatch: header says {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_model(self, index: usize) -> Self {
        Error::Model {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// True for integrity failures (wrong version, wrong kind, bad checksum).
    pub fn is_integrity(&self) -> bool {
        match self {
            Error::FormatVersion { .. } | Error::Kind { .. } | Error::Checksum { .. } => true,
            Error::Model { source, .. } | Error::Sample { source, .. } => source.is_integrity(),
            _ => false,
        }
    }

    /// True for numerical failures (divergence, non-finite values).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::Divergence { .. } => true,
            Error::Model { source, .. } | Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
