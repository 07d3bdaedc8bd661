use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not positive definite")]
    NotSpd,
    #[error("matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("A = K^T Q is singular or ill-conditioned (condition number {condition:e})")]
    SingularA { condition: f64 },
    #[error("covariance is numerically singular (lambda_min / lambda_max = {ratio:e})")]
    SingularSigma { ratio: f64 },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("sinkhorn variant requires a precomputed kernel")]
    MissingKernel,
    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("variant {0} is not supported here")]
    UnsupportedVariant(String),
    #[error("mask at sigma = {sigma} selects no tokens")]
    EmptyMask { sigma: f64 },
    #[error("step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("commutation hypothesis violated (residual {residual:e})")]
    CommutationViolated { residual: f64 },
    #[error("measures have different sizes ({left} vs {right})")]
    SizeMismatch { left: usize, right: usize },
    #[error("problem size {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("position marginals differ")]
    MarginalMismatch,
    #[error("exponent {exponent:e} would overflow")]
    Overflow { exponent: f64 },
    #[error("outside the domain of the closed form: {0}")]
    OutOfDomain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

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
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
