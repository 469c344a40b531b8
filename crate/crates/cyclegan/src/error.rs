use stainlab_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T, E = CycleGanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CycleGanError {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// No trained checkpoint is available for the request.
    #[error("not ready: {0}")]
    NotReady(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Autodiff(AutodiffError),

    #[error(transparent)]
    Core(#[from] stainlab_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<AutodiffError> for CycleGanError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::Divergence(msg) => CycleGanError::Divergence(msg),
            other => CycleGanError::Autodiff(other),
        }
    }
}

impl From<CycleGanError> for stainlab_core::Error {
    fn from(e: CycleGanError) -> Self {
        match e {
            CycleGanError::Core(e) => e,
            CycleGanError::NotReady(msg) => stainlab_core::Error::NotReady(msg),
            other => stainlab_core::Error::Model(other.to_string()),
        }
    }
}
