use thiserror::Error;

/// Errors raised by the lab.
///
/// `Config` covers invalid arguments, bad keys and violated preconditions.
/// `Numeric` is reserved for failures of the mathematics itself (for example a
/// replica fixed point with `gamma >= 1`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}
