use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("dataset indicator {index} out of range for {count} datasets")]
    Indicator { index: usize, count: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("pairing mismatch: {0}")]
    Pairing(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
