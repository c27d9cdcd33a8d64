use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor or field dimensions are inconsistent with the operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A group element or numeric argument is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (bad hyperparameter, unstable time step, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level problem (missing reference trajectory, short rollout, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A checkpoint does not match the model spec it is loaded into.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Malformed tensor file or manifest.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
