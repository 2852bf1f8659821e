use thiserror::Error;

/// Errors produced by the tensor algebra, estimation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("conjugate symmetry violated: imaginary residue {residue:e} exceeds tolerance {tolerance:e}")]
    ConjugateSymmetry { residue: f64, tolerance: f64 },

    #[error("SVD did not converge on frequency slice {0}")]
    SvdFailure(usize),

    #[error("block-circulant lifting of size {rows}x{cols} exceeds the 4096 limit")]
    TooLarge { rows: usize, cols: usize },

    #[error("solver diverged at iteration {0}")]
    Divergence(usize),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
