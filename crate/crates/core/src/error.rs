use thiserror::Error;

/// Errors raised by tensor operations and everything built on top of them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { value: f64, index: usize },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}
pub(crate) use contract;
