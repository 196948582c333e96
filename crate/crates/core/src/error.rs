use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClamError {
    #[error(transparent)]
    Tensor(#[from] ndiff::NdError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("environment: {0}")]
    Env(String),
    #[error("cannot step a finished episode")]
    EpisodeDone,
    #[error("trajectory length {len} exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("parameter stores differ: {0}")]
    ParamMismatch(String),
    #[error("non-finite policy logits")]
    NonFiniteLogits,
    #[error("degenerate embedding set: {0}")]
    Degenerate(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ClamError>;
