//! Minimal reverse-mode automatic differentiation over dense 2-D tensors,
//! the layers built from it, and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;


pub use adam::{AdamConfig, AdamState};
pub use layers::{Linear, LstmCell, LstmState, SelfAttention};
pub use params::{GradSet, ParamId, ParamSet};
pub use tape::{Blocks, Gradients, RowRef, Tape, Var};
pub use tensor::{
    cosine_similarity, dot, log_sum_exp, matmul, norm, sigmoid, softmax, softplus, squared_distance, Tensor,
    COSINE_NORM_FLOOR,
};

use thiserror::Error;

/// Floating-point type used throughout the crate.
pub type Real = f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("loss must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Self::Shape { op, detail }
    }
}
