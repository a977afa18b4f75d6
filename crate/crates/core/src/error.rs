use thiserror::Error;

/// Errors raised by the discretizations and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("positions are not strictly increasing at node {index}")]
    NotMonotone { index: usize },
    #[error("density has zero mass")]
    ZeroMass,
    #[error("grid node {index} (xi = {xi}) falls into a zero-density gap; the inverse distribution function is discontinuous there")]
    DensityGap { index: usize, xi: f64 },
    #[error("degenerate cell {index}: stretch {stretch}")]
    DegenerateCell { index: usize, stretch: f64 },
    #[error("triangle {index} is inverted or flat (image area {area})")]
    InvertedTriangle { index: usize, area: f64 },
    #[error("function undefined at particle {index} (mollified density {density})")]
    UndefinedAt { index: usize, density: f64 },
    #[error("Newton failed after {iterations} iterations (residual {residual:e})")]
    NewtonFailure { iterations: usize, residual: f64 },
    #[error("no admissible step found: {0}")]
    LineSearch(String),
    #[error("minimizing-movement decrease violated: {after} > {before}")]
    DecreaseViolated { before: f64, after: f64 },
    #[error("singular linear system")]
    Singular,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

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

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
