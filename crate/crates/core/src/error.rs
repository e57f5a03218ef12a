use thiserror::Error;

pub type Result<T> = std::result::Result<T, VqError>;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("usage histogram is empty")]
    EmptyHistogram,

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("need at least {needed} points for {what}, got {got}")]
    InsufficientPoints {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("EMA usage count of codeword {0} underflowed to zero; the discount is too aggressive")]
    CountUnderflow(usize),

    #[error("backward pass called without a forward cache for {0}")]
    MissingCache(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VqError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        VqError::DimensionMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            VqError::NonFinite(_) | VqError::CountUnderflow(_) => 2,
            _ => 1,
        }
    }
}
