use thiserror::Error;

/// Every failure mode of the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("admissibility error: {0}")]
    Admissibility(String),
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("divergence: |z|*rho(A) = {0} >= 1")]
    Divergence(f64),
    #[error("series did not converge: {0}")]
    NoConvergence(String),
    #[error("unsupported spectral radius {0}")]
    UnsupportedSpectralRadius(f64),
    #[error("hereditary domain violated: {0}")]
    HereditaryDomain(String),
    #[error("residual matrix not positive semidefinite (lambda_min = {0:e})")]
    NotCoisometrizable(f64),
    #[error("exact observability required: {0}")]
    ExactObservabilityRequired(String),
    #[error("not a *-hypercontraction: lambda_min = {0:e}")]
    NotStarHypercontraction(f64),
    #[error("model hypothesis failed: {0}")]
    ModelHypothesis(String),
    #[error("gramian differs from identity by {0:e}")]
    ModelCoordinates(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight mismatch")]
    WeightMismatch,
    #[error("missing step data for index {0}")]
    MissingStep(usize),
    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence(_) | Error::UnsupportedSpectralRadius(_) => 3,
            Error::ExactObservabilityRequired(_)
            | Error::NotCoisometrizable(_)
            | Error::ModelCoordinates(_) => 4,
            Error::NoConvergence(_) | Error::Truncation(_) => 5,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
