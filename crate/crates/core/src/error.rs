use thiserror::Error;

/// Errors raised by the forward, inverse and IO layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite solution state at grid node {node} (lambda = {lambda})")]
    NonFiniteState { node: usize, lambda: String },

    #[error("boundary form V(phi) is near singular at lambda = {lambda} (condition {cond:.3e})")]
    NearSingular { lambda: String, cond: f64 },

    #[error("samples were integrated on different grids")]
    GridMismatch,

    #[error("zero count mismatch in band {band}: found {found}, expected {expected}")]
    CountMismatch { band: usize, found: usize, expected: usize },

    #[error("root refinement did not converge: {0}")]
    NoConvergence(String),

    #[error("Weyl matrix pole is not simple in cluster {cluster} near lambda = {lambda}: {detail}")]
    AssumptionOneViolated { cluster: usize, lambda: String, detail: String },

    #[error("residue contour around lambda = {lambda} hit the minimal radius {radius:e}")]
    ContourCollision { lambda: String, radius: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("truncation {n_trunc} exceeds available bands {n_max}")]
    TruncationTooLarge { n_trunc: usize, n_max: usize },

    #[error("main equation is numerically singular at x = {x} (condition {cond:.3e})")]
    MainEquationSingular { x: f64, cond: f64 },

    #[error("parse error at line {line}, path {path}: {msg}")]
    ParseError { line: usize, path: String, msg: String },

    #[error("unsupported file version {0:?}")]
    UnsupportedVersion(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SpecError {
    fn from(e: std::io::Error) -> Self {
        SpecError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SpecError>;
