use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported stain count {0}: linear deconvolution handles 1 to 3 stains")]
    UnsupportedStainCount(usize),

    #[error("stain matrix is ill-conditioned (condition number {condition:.3e} exceeds {bound:.1e})")]
    IllConditioned { condition: f64, bound: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Pearson correlation needs variance in both inputs.
    #[error("correlation undefined: {0}")]
    CorrelationUndefined(String),

    #[error("not ready: {0}")]
    NotReady(String),

    /// Failure inside a learned model while synthesizing.
    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Tiff(#[from] tiff::TiffError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
