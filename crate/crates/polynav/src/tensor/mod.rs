//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! Everything learnable in this crate is expressed through this module: a
//! [`Tape`] records the forward pass, [`Tape::backward`] replays it in
//! reverse to accumulate gradients, and [`AdamW`] applies decoupled
//! weight-decay updates to a [`ParamSet`]. Tensors are immutable once
//! created and a tape is confined to a single worker; parameters move
//! between workers only as serialized snapshots.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod param;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use optim::{AdamW, OptimError};
pub use param::{ParamEntry, ParamId, ParamSet};
pub use tape::{GradSet, Tape, Tensor};

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by backward; rerun the forward pass")]
    TapeConsumed,
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{op}: index {index} out of bounds for shape {shape:?}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for shape {shape:?}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;
