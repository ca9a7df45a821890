//! Reverse-mode differentiation on a flat tape.
//!
//! The engine covers exactly the layer set the classifier needs: graph
//! convolution (including the chain from a trainable adjacency mask through
//! degree normalization and the Chebyshev recurrence), batch normalization,
//! ReLU, dropout, global mean pooling, fully-connected layers and
//! softmax cross-entropy, plus the Adam optimizer. Everything runs in f64.

mod adam;
mod ops;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig};
pub use ops::{
    batch_norm, cheb_conv_forward, dropout, fully_connected, global_mean_pool, relu, softmax,
    softmax_cross_entropy, softmax_cross_entropy_indexed, BatchNormState, Mode,
};
pub use params::{
    load_named_tensors, save_named_tensors, ParamEntry, ParamKind, ParamState,
};
pub use tape::{Grads, Tape, Var};

use ndarray::{Array2, ArrayD, Ix2};
use thiserror::Error;

/// Copies a rank-2 tape value into a fixed-dimension array.
pub fn view2(value: &ArrayD<f64>) -> Array2<f64> {
    value.view().into_dimensionality::<Ix2>().expect("rank-2 value").to_owned()
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(&'static str),
    #[error("batch of {0} is too small for train-mode batch norm")]
    BatchTooSmall(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("label row {0} is not one-hot")]
    InvalidLabel(usize),
    #[error("missing rewind snapshot for {0}")]
    MissingSnapshot(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[cfg(test)]
mod tests;
