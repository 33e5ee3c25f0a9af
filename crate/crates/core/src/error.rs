use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the coarse-graining toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("state space exceeds the capacity of {cap} states")]
    Capacity { cap: usize },
    #[error("monomial with exponents {0:?} is not contained in the dictionary")]
    Representation(Vec<u32>),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("integration produced a non-finite state at t = {time}")]
    Integration { time: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
