use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("demonstration pool is empty: no query has both a relevant and an irrelevant passage")]
    EmptyPool,
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("bm25 index is empty")]
    EmptyIndex,
    #[error("pool has {pool} demonstrations, need at least {needed}")]
    PoolTooSmall { pool: usize, needed: usize },
    #[error("demonstration list is empty")]
    EmptyList,
    #[error("requested {k} demonstrations from only {available} candidates")]
    NotEnoughCandidates { k: usize, available: usize },
    #[error("exhaustive search over {permutations} permutations exceeds the limit of {limit}")]
    SearchTooLarge { permutations: u128, limit: u128 },
    #[error("non-finite loss at {stage}: {detail}")]
    NonFiniteLoss { stage: &'static str, detail: String },
    #[error("invalid template: {0}")]
    Template(String),
    #[error("scorer backend failed for {context}: {source}")]
    Scorer {
        context: String,
        #[source]
        source: BackendError,
    },
    #[error("policy {policy} requires the {model} model")]
    MissingModel { policy: String, model: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("stale artifact {}: produced under config {found}, current config is {expected}", path.display())]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("unresolved reference {0}")]
    UnresolvedRef(String),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures of a scorer backend. Retries are handled inside the backend; what
/// surfaces here is final.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("server returned status {0}")]
    Status(u16),
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend unavailable after {attempts} attempts (last error: {last})")]
    Unavailable { attempts: u32, last: Box<BackendError> },
}
