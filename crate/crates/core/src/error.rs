use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("empty projection: every joint of every frame is behind the camera")]
    EmptyProjection,

    #[error("degenerate vector: norm {norm:e} below {threshold:e}")]
    DegenerateVector { norm: f64, threshold: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("cannot sample a negative: dataset holds a single action class")]
    CannotSampleNegative,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
