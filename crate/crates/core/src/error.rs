use alloc::string::String;

/// Errors raised by the numerical core, the model and the training loop.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is singular (eigenvalue {eigenvalue:e} below 1e-14); add jitter to the diagonal")]
    Singular { eigenvalue: f64 },
    #[error("degenerate vector with zero norm in {op}")]
    DegenerateVector { op: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite gradient for parameter {param}")]
    NonFinite { param: String },
    #[error("non-finite loss at epoch {epoch} on bag {bag}")]
    NonFiniteLoss { epoch: usize, bag: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
