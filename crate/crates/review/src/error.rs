use thiserror::Error;

pub type Result<T, E = ReviewError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("not found: {0}")]
    NotFound(String),

    /// Malformed or semantically invalid request.
    #[error("invalid request: {0}")]
    Invalid(String),

    /// Request conflicts with session state.
    #[error("conflict: {0}")]
    Conflict(String),

    #[error("unauthorized: {0}")]
    Unauthorized(String),

    #[error("corrupt study: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Core(#[from] stainlab_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
