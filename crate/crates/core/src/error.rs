use thiserror::Error;

/// Errors produced by the pricing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probabilities sum to {sum}, expected 1 within 1e-9")]
    NonNormalized { sum: f64 },

    #[error("value {value} lies outside [0, 1]")]
    OutOfRange { value: f64 },

    #[error("negative probability {prob}")]
    NegativeProb { prob: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for width {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("sample set has no rows")]
    EmptySampleSet,

    #[error("candidate grid needs {required} evaluations, budget is {budget}")]
    GridOverflow { required: u128, budget: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("buyer {buyer}: price {price} matches neither canonical price")]
    NonCanonicalPrice { buyer: usize, price: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported generator `{0}`")]
    UnsupportedGenerator(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
