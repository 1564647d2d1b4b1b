use crate::policy::PolicyParams;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid token {0:?}: expected one of the 20 canonical amino-acid letters")]
    InvalidToken(char),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("diversity cache is stale: {0}")]
    StaleCache(String),
    #[error("numeric abort: {message}")]
    NumericAbort {
        message: String,
        /// Parameters from the last step that produced finite values.
        last_good: Option<Box<PolicyParams>>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>, last_good: Option<&PolicyParams>) -> Self {
        Error::NumericAbort {
            message: message.into(),
            last_good: last_good.map(|p| Box::new(p.clone())),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
