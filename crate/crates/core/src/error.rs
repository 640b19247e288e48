//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A state vector contained NaN or infinity.
    NonFiniteState,
    /// A policy emitted a non-finite action; names the policy and the step.
    NonFiniteAction { policy: String, step: usize },
    /// A gradient or loss became non-finite; names the offending tensor.
    NonFiniteTensor { tensor: String },
    /// Vector length did not match the expected dimension.
    ShapeMismatch { expected: usize, got: usize },
    /// Empty input where a nonempty sequence is required.
    EmptyInput,
    /// Grid construction rejected the given bounds/points.
    BadGrid(String),
    /// Discounted value iteration hit its iteration cap.
    NoConvergence { iterations: usize, residual: f64 },
    /// Invalid configuration value.
    BadConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFiniteState => write!(f, "non-finite state"),
            Error::NonFiniteAction { policy, step } => {
                write!(f, "policy `{policy}` returned a non-finite action at step {step}")
            }
            Error::NonFiniteTensor { tensor } => write!(f, "non-finite values in {tensor}"),
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Error::EmptyInput => write!(f, "empty input"),
            Error::BadGrid(msg) => write!(f, "bad grid: {msg}"),
            Error::NoConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:e})")
            }
            Error::BadConfig(msg) => write!(f, "bad config: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
