use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The integrated or trained state became non-finite.
    #[error("divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Numeric blow-ups map to a distinct CLI exit status.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::Numeric(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
