use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tilt exponent {exponent} exceeds limit {limit}; recenter coordinates")]
    TiltOverflow { exponent: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("unsupported bias direction: {0}")]
    UnsupportedDirection(String),

    #[error("start point {0} lies outside the admissible start set")]
    StartOutsideAdmissible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
