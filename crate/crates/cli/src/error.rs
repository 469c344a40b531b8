use stainlab_cyclegan::CycleGanError;
use stainlab_review::ReviewError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("not ready: {0}")]
    NotReady(String),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::NotReady(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<stainlab_core::Error> for CliError {
    fn from(e: stainlab_core::Error) -> Self {
        use stainlab_core::Error as E;
        match e {
            E::NotReady(m) => CliError::NotReady(m),
            E::Io(_) | E::Image(_) | E::Json(_) | E::Csv(_) | E::Tiff(_) => CliError::Io(e.to_string()),
            E::Model(m) if m.starts_with("training diverged") => CliError::Divergence(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<CycleGanError> for CliError {
    fn from(e: CycleGanError) -> Self {
        match e {
            CycleGanError::Config(m) => CliError::Config(m),
            CycleGanError::NotReady(m) => CliError::NotReady(m),
            CycleGanError::Divergence(m) => CliError::Divergence(m),
            CycleGanError::Core(e) => e.into(),
            CycleGanError::Io(e) => e.into(),
            CycleGanError::Json(e) => e.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Core(e) => e.into(),
            ReviewError::Io(e) => e.into(),
            ReviewError::Json(e) => e.into(),
            ReviewError::NotFound(m) => CliError::Io(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}
