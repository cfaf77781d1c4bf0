use crate::autodiff::AdError;
use crate::optim::LossRecord;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),
    #[error("problem `{problem}` has no parameter `{key}`")]
    UnknownParam { problem: String, key: String },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("problem `{0}` has no exact SDE step")]
    NoExactStep(String),
    #[error("no reference solution for problem `{0}`")]
    NoReference(String),
    #[error("diffusion matrix is singular")]
    SingularDiffusion,
    #[error("non-finite state in {0}")]
    NonFiniteState(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported architecture combination: {0}")]
    Unsupported(String),
    #[error("training diverged at iteration {iteration}: {cause}")]
    Diverged {
        iteration: usize,
        cause: String,
        history: Vec<LossRecord>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
