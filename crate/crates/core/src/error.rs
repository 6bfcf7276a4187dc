use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix has {found} entries, expected {expected}")]
    EntryCount { expected: usize, found: usize },

    #[error("matrix contains a non-finite entry")]
    NonFinite,

    #[error("not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("operator order violated (min eigenvalue of the difference {0:.3e})")]
    OrderViolation(f64),

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid subset mask: {0}")]
    InvalidMask(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("size cap exceeded: {0}")]
    CapExceeded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input errors are the caller's fault; everything else is numerical.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}
