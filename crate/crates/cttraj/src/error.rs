use nalgebra::DMatrix;

/// Errors produced by model validation and the estimation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("Cholesky factorization failed for a {}x{} matrix", matrix.nrows(), matrix.ncols())]
    CholeskyFailed { matrix: Box<DMatrix<f64>> },

    #[error("value {value} at index {index} exceeds ceiling {ceiling}")]
    AboveCeiling {
        index: usize,
        value: f64,
        ceiling: f64,
    },

    #[error("trajectory index {index} exceeds maximum day {max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset is invalid: {0} record(s) violate model constraints")]
    InvalidDataset(usize),

    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no positive definite iterate found in the linear-covariance update")]
    NoPositiveDefiniteIterate,

    #[error("all {} starts failed: {}", causes.len(), causes.join("; "))]
    AllStartsFailed { causes: Vec<String> },
}

pub type Result<T> = std::result::Result<T, Error>;
