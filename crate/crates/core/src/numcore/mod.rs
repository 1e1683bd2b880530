//! Dense numerical kernel: matrices, nonlinearities, losses, reverse-mode
//! gradients, Adam, finite-difference checks and seeded randomness.

mod adam;
mod gradcheck;
mod matrix;
mod params;
mod rng;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, WorstEntry};
pub use matrix::{cross_entropy, matmul, sigmoid, sigmoid_scalar, softmax, softmax_rows, tanh, Matrix, PROB_FLOOR};
pub use params::{Gradients, ParamId, ParamSet, Parameter};
pub use rng::Rng;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("usage error: {0}")]
    Usage(String),
}
