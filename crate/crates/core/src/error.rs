use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands (or an operand and an expectation) disagree on shape.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An axis index outside the tensor rank.
    InvalidAxis { axis: usize, rank: usize },
    /// A scalar argument outside its admissible range.
    OutOfRange { what: &'static str, value: f64 },
    /// A structurally invalid argument (empty input, bad count, ...).
    InvalidArgument(String),
    /// A loss or gradient became NaN or infinite.
    NonFinite { what: &'static str, iteration: usize },
    /// An operation that requires a specific generator kind got another.
    UnsupportedGenerator(&'static str),
    /// Refinement hit a non-finite loss or gradient; carries the iterates so far.
    RefineAborted {
        iteration: usize,
        iterates: Vec<crate::refinement::RefineIterate>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            Error::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} is invalid for a rank-{rank} tensor")
            }
            Error::OutOfRange { what, value } => write!(f, "{what} out of range: {value}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { what, iteration } => {
                write!(f, "non-finite {what} at iteration {iteration}")
            }
            Error::UnsupportedGenerator(msg) => write!(f, "unsupported generator: {msg}"),
            Error::RefineAborted { iteration, iterates } => {
                write!(f, "refinement aborted: non-finite loss at iteration {iteration}")?;
                for it in iterates {
                    write!(
                        f,
                        "\n  iter {}: score={} kl={} total={} grad_norm={}",
                        it.iteration, it.raw_score, it.kl_loss, it.total_loss, it.raw_grad_norm
                    )?;
                }
                Ok(())
            }
        }
    }
}

impl core::error::Error for Error {}
