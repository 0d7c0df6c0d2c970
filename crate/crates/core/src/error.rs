use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WlraError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("columns are linearly dependent: pivot norm {pivot:.3e} at column {column}")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("invalid problem data: {0}")]
    InvalidData(String),

    #[error("observed support is empty")]
    EmptySupport,

    #[error("weight at ({row}, {col}) is {weight}, positive-weights mode needs every weight > 0")]
    NonPositiveWeight { row: usize, col: usize, weight: f64 },

    #[error("lambda = {lambda} must satisfy 0 < lambda < w0 = {w0}")]
    LambdaOutOfRange { lambda: f64, w0: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("initial iterate not confined: rho(init) = {rho} > rho0 = {rho0}")]
    InitNotConfined { rho: f64, rho0: f64 },

    #[error("Armijo backtracking failed after {backtracks} reductions")]
    BacktrackLimit { backtracks: u32 },

    #[error("singular value {value} at index {index} is negative")]
    NegativeSingularValue { index: usize, value: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate entry ({row}, {col}) at line {line}")]
    DuplicateEntry { row: usize, col: usize, line: usize },

    #[error("index ({row}, {col}) outside a {rows}x{cols} matrix")]
    IndexOutOfBounds { row: usize, col: usize, rows: usize, cols: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("experiments do not share data: {0}")]
    MismatchedData(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for WlraError {
    fn from(e: std::io::Error) -> Self {
        WlraError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WlraError>;
