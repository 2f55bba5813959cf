use std::path::PathBuf;

use onetfwi_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape { context: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("CFL violation: dt = {dt:e} s exceeds dt_max = {dt_max:e} s")]
    Cfl { dt: f64, dt_max: f64 },
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: String, step: usize },
    #[error("shot {shot}: {source}")]
    Shot { shot: usize, #[source] source: Box<Error> },
    #[error("npy format: {0}")]
    Npy(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, #[source] source: std::io::Error },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the failure is numerical (NaN, CFL) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Cfl { .. } | Error::NonFinite { .. } => true,
            Error::Shot { source, .. } => source.is_numerical(),
            Error::Tensor(TensorError::NonFinite { .. }) => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
