use alloc::string::String;

/// Errors produced by the fair-regression core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (jitter ceiling {jitter:e} reached)")]
    NotPositiveDefinite { jitter: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("group query `{0}` selects no rows")]
    EmptyGroup(String),
    #[error("split leaves one side empty (n = {n}, test = {test})")]
    EmptySplit { n: usize, test: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("zero noise variance with more than one observation in a leaf")]
    DegenerateNoise,
    #[error("z vector is zero; the constraint is inactive")]
    ZeroZ,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
