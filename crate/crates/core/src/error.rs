use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on shape.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A class index or table index is out of range.
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// A softmax row had every entry masked.
    FullyMasked { row: usize },
    /// Backward was called on something that is not a scalar, or twice.
    Backward(String),
    /// A token could not be embedded or encoded.
    Encoding(String),
    /// Invalid configuration.
    Config(String),
    /// Invalid ablation request.
    Ablation(String),
    /// Loss became NaN or infinite during training.
    NonFinite { step: u64, what: &'static str },
    /// Degenerate input to a metric or analysis.
    Degenerate(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: dimension mismatch between {lhs:?} and {rhs:?}")
            }
            Error::Index { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Error::FullyMasked { row } => write!(f, "softmax row {row} is fully masked"),
            Error::Backward(m) => write!(f, "backward: {m}"),
            Error::Encoding(m) => write!(f, "encoding error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Ablation(m) => write!(f, "ablation error: {m}"),
            Error::NonFinite { step, what } => {
                write!(f, "non-finite {what} at step {step}")
            }
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
