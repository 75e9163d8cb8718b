use thiserror::Error;

/// Failure modes shared by every design, representation and propagation routine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degree/constraint mismatch: degree {degree} needs {expected} constraints, got {got}")]
    DegreeMismatch {
        degree: usize,
        expected: usize,
        got: usize,
    },

    #[error("degenerate constraint set")]
    DegenerateConstraints,

    #[error("scaling factor non-positive at t = {t}")]
    NonPositiveScaling { t: f64 },

    #[error("reference frequency non-positive at t = {t}")]
    NonPositiveFrequency { t: f64 },

    #[error("ansatz singularity: infinite Rabi frequency at t = {t}")]
    InfiniteRabi { t: f64 },

    #[error("ansatz singularity: infinite detuning at t = {t}")]
    InfiniteDetuning { t: f64 },

    #[error("degenerate point: mixing angle undefined at t = {t}")]
    DegeneratePoint { t: f64 },

    #[error("truncation insufficient: discarded norm {discarded:e}")]
    TruncationInsufficient { discarded: f64 },

    #[error("position grid too narrow: edge density {edge:e}")]
    GridTooNarrow { edge: f64 },

    #[error("zero samples: nothing to project")]
    ZeroSamples,

    #[error("state not normalized: norm {norm}")]
    NotNormalized { norm: f64 },

    #[error("operator not Hermitian at t = {t}: relative defect {defect:e}")]
    NotHermitian { t: f64, defect: f64 },

    #[error("stiffness failure: step size {step:e} underflowed at t = {t}")]
    StiffnessFailure { t: f64, step: f64 },

    #[error("accuracy failure: norm drift {drift:e}")]
    AccuracyFailure { drift: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
