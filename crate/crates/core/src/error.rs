use thiserror::Error;

/// Errors produced by the estimation and simulation routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("design matrix is numerically rank-deficient (relative pivot threshold {threshold:e})")]
    RankDeficient { threshold: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error(
        "quantile level {level} is too extreme for n = {n} (level*n and (1-level)*n must both be >= 1); \
         pass FitOptions::allow_degenerate to override"
    )]
    DegenerateQuantile { level: f64, n: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("interior-point solver failed to converge after {iterations} iterations (gap {gap:e})")]
    SolverDiverged { iterations: usize, gap: f64 },

    #[error("spline evaluation outside the fitted knot span")]
    OutOfRange,

    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("candidate tau {tau} is infeasible: tau/2 * n < 1 for n = {n}")]
    DegenerateCandidate { tau: f64, n: usize },

    #[error("{failed} of {total} bootstrap replicates failed rank checks (more than 5%)")]
    ResampleInstability { failed: usize, total: usize },

    #[error("component index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("method {method} is not compatible with scenario {scenario}")]
    IncompatibleMethodScenario { method: String, scenario: String },

    #[error("unknown override key `{0}`")]
    UnknownOverride(String),

    #[error("dataset has no cluster ids")]
    MissingClusterIds,

    #[error("dataset has no candidate-IV matrix")]
    MissingInstruments,

    #[error("no lambda in the grid produced a nonempty valid-IV set")]
    AllSelectionsEmpty,
}

pub type Result<T> = std::result::Result<T, Error>;
