use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing embeddings for ids: {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector cannot be scored by cosine")]
    ZeroNorm,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown query id `{0}`")]
    UnknownQuery(String),

    #[error("backend unavailable after {attempts} attempt(s): {cause}")]
    BackendUnavailable { attempts: u32, cause: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("query {query_id}: {source}")]
    Query {
        query_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn for_query(self, query_id: &str) -> Self {
        Error::Query {
            query_id: query_id.to_string(),
            source: Box::new(self),
        }
    }

    /// Stable machine-readable class, used by the CLI's single-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DuplicateId(_) => "duplicate-id",
            Error::MissingEmbeddings(_) => "missing-embeddings",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::ZeroNorm => "zero-norm",
            Error::Invalid(_) => "invalid",
            Error::Config(_) => "config",
            Error::UnknownQuery(_) => "unknown-query",
            Error::BackendUnavailable { .. } => "backend-unavailable",
            Error::Protocol(_) => "protocol",
            Error::Query { source, .. } => source.class(),
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
