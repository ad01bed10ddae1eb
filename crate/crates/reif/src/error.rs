use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("subspace does not meet the ball")]
    DisjointSlice,
    #[error("empty slice")]
    EmptySlice,
    #[error("points are not independent (first violating index {index})")]
    Degenerate { index: usize },
    #[error("misclassified ball: expected {expected}, got {got}")]
    Misclassified { expected: char, got: char },
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("degenerate subspace field at {point:?}: eigen-gap {gap:e}")]
    DegenerateField { point: Vec<f64>, gap: f64 },
    #[error("projection stalled after {iters} iterations (last step {step:e})")]
    ProjectionStall { iters: usize, step: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
