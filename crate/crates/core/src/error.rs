use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    InvalidAxis {
        axis: usize,
        rank: usize,
    },
    IndexOutOfRange {
        index: usize,
        len: usize,
    },
    NotScalar(Vec<usize>),
    MissingGradient(String),
    InsufficientNeighbors {
        needed: usize,
        stored: usize,
    },
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} is out of range for a rank-{rank} tensor")
            }
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} is out of range for length {len}")
            }
            Error::NotScalar(shape) => write!(f, "expected a scalar, got shape {shape:?}"),
            Error::MissingGradient(name) => write!(f, "parameter `{name}` has no gradient"),
            Error::InsufficientNeighbors { needed, stored } => write!(
                f,
                "dilated selection needs {needed} stored neighbors but only {stored} are available; \
                 rebuild the neighbor index with a larger k_base"
            ),
            Error::InvalidArgument(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
