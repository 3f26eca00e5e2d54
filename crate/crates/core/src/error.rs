use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("signals are sampled on different grids")]
    GridMismatch,

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("atom {index} is degenerate against the current selection (residual norm {norm:e})")]
    DegenerateAtom { index: usize, norm: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("atom {0} is already selected")]
    AlreadySelected(usize),

    #[error("selection is empty")]
    EmptySelection,

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
