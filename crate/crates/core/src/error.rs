use thiserror::Error;

/// Errors surfaced by the rendering, optimization, and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("timestamp {t} outside track range [{first}, {last}] (horizon {horizon})")]
    OutOfRange { t: f64, first: f64, last: f64, horizon: f64 },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("optimization diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: String },
    #[error("missing render tape: backward requires a forward pass recorded with tape enabled")]
    MissingTape,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfRange { .. } => "out_of_range",
            Error::Usage(_) => "usage",
            Error::Dimension(_) => "dimension",
            Error::Invalid(_) => "invalid",
            Error::Divergence { .. } => "divergence",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::MissingTape => "missing_tape",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
