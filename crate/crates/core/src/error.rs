use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the domain box")]
    Domain { point: Vec<f64> },

    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("{what}: non-finite value")]
    NonFiniteValue { what: &'static str },

    #[error("fixed-point inversion did not converge after {iters} iterations (residual {residual:e})")]
    InversionFailed { iters: usize, residual: f64 },

    #[error("jacobian is numerically singular (condition estimate {cond:e})")]
    Singular { cond: f64 },

    #[error("non-positive jacobian determinant {det:e} in residual block")]
    NonPositiveDeterminant { det: f64 },

    #[error("ode solver exceeded {max_steps} steps at t = {t}")]
    MaxSteps { max_steps: usize, t: f64, state: Vec<f64> },

    #[error("ode step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("trajectory left the domain at t = {t}")]
    ExitedDomain { t: f64 },

    #[error("transport failed for samples {indices:?}")]
    TransportFailed { indices: Vec<usize> },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("zero-length householder vector")]
    ZeroVector,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("zero variance in observations")]
    ZeroVariance,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
