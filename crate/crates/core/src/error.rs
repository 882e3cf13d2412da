use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("invalid term descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("simulation diverged at t = {time} s: {quantity} is not finite")]
    Divergence { quantity: String, time: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("subset {index}: {source}")]
    Subset {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty Pareto front")]
    EmptyFront,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn mismatch(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) => true,
            Error::Subset { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
