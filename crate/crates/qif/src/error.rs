use thiserror::Error;

/// Errors produced across the crate.
#[derive(Error, Debug)]
pub enum QifError {
    #[error("non-finite value encountered: {0}")]
    NonFiniteInput(String),
    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),
    #[error("inconsistent covariate count: {0}")]
    RaggedCovariates(String),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("maximum iterations exceeded")]
    MaxIterationsExceeded,
    #[error("curvature matrix is numerically singular")]
    SingularCurvature,
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("constraint matrix is rank deficient")]
    RankDeficientConstraint,
    #[error("degenerate degrees of freedom: score dimension equals parameter dimension")]
    DegenerateDf,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, QifError>;
