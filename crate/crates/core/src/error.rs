use thiserror::Error;

#[derive(Debug, Error)]
pub enum WmrError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("trajectory file row {row}: {msg}")]
    Trajectory { row: usize, msg: String },
    #[error("non-finite action in env {env}")]
    NonFiniteAction { env: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Sim(#[from] wmr_sim::SimError),
    #[error(transparent)]
    Autodiff(#[from] wmr_autodiff::AdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WmrError {
    /// Process exit code for this failure class: 2 config, 3 numerical, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            WmrError::Config(_) | WmrError::UnknownKey(_) | WmrError::Trajectory { .. } | WmrError::Checkpoint(_) => 2,
            WmrError::Numerical(_) | WmrError::NonFiniteAction { .. } | WmrError::Sim(_) | WmrError::Autodiff(_) => 3,
            WmrError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, WmrError>;
