use thiserror::Error;

/// Errors raised by the numerical primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("requested {requested} eigenpairs from a {dim}x{dim} matrix")]
    RankOutOfRange { requested: usize, dim: usize },
    #[error("Jacobi sweeps did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is rank deficient (smallest/largest singular value {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Errors raised while reading or shaping mortality data.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: year {year} appears after year {previous}")]
    NonMonotoneYears { line: usize, year: i32, previous: i32 },
    #[error("missing rate for {group} at year {year}, age {age}")]
    MissingCell { group: String, year: i32, age: u32 },
    #[error("non-positive rate {rate} for {group} at year {year}, age {age}")]
    NonPositiveRate { group: String, year: i32, age: u32, rate: f64 },
    #[error("cutoff year {cutoff} is not strictly inside {first}..{last}")]
    CutoffOutOfRange { cutoff: i32, first: i32, last: i32 },
    #[error("panels are not age aligned: {0}")]
    AgeMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

/// Errors raised by decision transforms and pricing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("annuity term {term} does not fit {ages} ages")]
    TermOutOfRange { term: usize, ages: usize },
    #[error("start index {start} out of range (at most {max})")]
    StartOutOfRange { start: usize, max: usize },
    #[error("discount factor {0} must lie in (0, 1]")]
    BadDiscount(f64),
    #[error("no intercept registered for group `{0}`")]
    UnknownGroup(String),
    #[error("intercept for group `{group}` has length {got}, expected {expected}")]
    InterceptLength { group: String, got: usize, expected: usize },
}

/// Errors raised by forecasting models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("series of length {len} is too short (need at least {need})")]
    TooShort { len: usize, need: usize },
    #[error("every candidate model was non-stationary or degenerate")]
    NoStableCandidate,
    #[error("forecast horizon must be at least 1")]
    BadHorizon,
    #[error("model set does not match the fit: {0}")]
    Mismatch(String),
}

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
