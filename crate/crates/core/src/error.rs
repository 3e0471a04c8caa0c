use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample space is degenerate: {0}")]
    EmptyDomain(String),
    #[error("maximum depth must be non-negative, got {0}")]
    DepthNegative(i64),
    #[error("split quantile must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("base measure assigns zero mass to a node region")]
    ZeroMass,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("point {0:?} lies outside the sample space")]
    OutOfDomain(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("node budget of {budget} exceeded while expanding depth {depth}")]
    NodeBudgetExceeded { budget: usize, depth: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("argument outside the density support: {0}")]
    DomainError(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported model version `{0}`")]
    UnknownModelVersion(String),
    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
