use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::llm::Cost;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("no cassette entry for key `{0}`")]
    MissingCassetteEntry(String),

    #[error("provider failure after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },

    #[error("budget exceeded: spent {spent}, cap {cap}")]
    BudgetExceeded { spent: Cost, cap: Cost },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("Pearson correlation undefined: {0}")]
    PearsonUndefined(&'static str),

    #[error("unparseable `{template}` response: {message}")]
    Unparseable { template: String, message: String },

    #[error("missing mandatory field `{0}`")]
    MissingField(String),

    #[error("unknown bug category `{0}`")]
    UnknownCategory(String),

    #[error("unknown IR bug type `{0}`")]
    UnknownIrType(String),

    #[error("harness: {0}")]
    Harness(String),

    #[error("network: {0}")]
    Network(String),

    #[error("rate limited; resume with cursor `{cursor}`")]
    RateLimited { cursor: String },

    #[error("snapshot version `{found}` is incompatible (expected `{expected}`)")]
    SnapshotVersion { found: String, expected: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    /// True for errors that should halt a campaign but leave it resumable.
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. })
    }
}
