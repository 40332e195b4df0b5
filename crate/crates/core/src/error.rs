//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate register name `{0}`")]
    DuplicateRegister(String),
    #[error("register `{0}` has dimension zero")]
    ZeroDimension(String),
    #[error("layout must contain at least one register")]
    EmptyLayout,
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("index {index} out of range for register `{register}` of dimension {dim}")]
    IndexOutOfRange {
        register: String,
        index: usize,
        dim: usize,
    },
    #[error("missing assignment for register `{0}`")]
    MissingAssignment(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("state norm deviates from 1 by {0:.3e}")]
    NotNormalized(f64),
    #[error("operator is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("measurement elements do not sum to the identity (deviation {0:.3e})")]
    IncompleteMeasurement(f64),
    #[error("Kraus set is not trace preserving (deviation {0:.3e})")]
    NotTracePreserving(f64),
    #[error("operator fails the {check} check (deviation {deviation:.3e})")]
    NotDensityOperator { check: &'static str, deviation: f64 },
    #[error("branch probabilities sum to {0}, not 1")]
    ProbabilityNotNormalized(f64),
    #[error("state does not factor over the requested registers (residual {0:.3e})")]
    NotProduct(f64),
    #[error("empty subset for superposition")]
    EmptySubset,
    #[error("invalid database spec: {0}")]
    InvalidSpec(String),
    #[error("query index {index} out of range 1..={n}")]
    InvalidQuery { index: usize, n: usize },
    #[error("total dimension {0} exceeds the dense-simulation guard of {1}")]
    DimensionOverflow(usize, usize),
    #[error("missing reference state for query {0}")]
    MissingReference(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
