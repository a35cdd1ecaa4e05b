use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("action component {0} is not finite")]
    NonFiniteAction(usize),
    #[error("mass matrix is not positive definite")]
    SingularMassMatrix,
    #[error("simulation state became non-finite at t={0:.4}s")]
    NonFiniteState(f64),
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("unknown terrain kind `{0}`")]
    UnknownTerrain(String),
    #[error("terrain level {0} out of range 0..={1}")]
    BadLevel(u32, u32),
}

pub type Result<T> = std::result::Result<T, SimError>;
