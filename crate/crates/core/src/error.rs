use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("training diverged at step {step}: {reason}")]
    DivergedTraining { step: usize, reason: String },

    #[error("infeasible density: could not place tree {placed} of {requested} after {attempts} attempts")]
    InfeasibleDensity {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("experiment stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
