use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("design matrix is singular: X'X is not positive definite")]
    SingularDesign,

    #[error("conditioning failure: {0}")]
    ConditioningFailure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("line fit needs at least 2 sub-threshold points in cluster {cluster}, found {found}")]
    InsufficientLowCpPoints { cluster: usize, found: usize },

    #[error("failed to parse design file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
