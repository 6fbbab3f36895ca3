use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("feature `{0}` has no data in any grid cell")]
    NoData(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: impl std::fmt::Display, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by training instability rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}
