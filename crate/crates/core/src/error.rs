use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("non-finite value in vector")]
    NonFinite,

    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },

    #[error("service error: {msg}")]
    Service {
        msg: String,
        retryable: bool,
        attempts: u32,
        retry_after_ms: u64,
    },

    #[error("path has no edges")]
    EmptyPath,

    #[error("no candidate passed selection")]
    EmptySelection,

    #[error("scorer failed on candidate {index}: {msg}")]
    Scorer { index: usize, msg: String },

    #[error("reasoner does not support {0}")]
    Unsupported(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
