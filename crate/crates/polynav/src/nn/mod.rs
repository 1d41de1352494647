//! Attention primitives shared by every learnable module: the attention
//! function, multi-head attention, pre-norm transformer blocks, causal
//! masks, average pooling, and sinusoidal index embeddings.

mod attention;
mod block;
mod embed;
mod recurrent;
#[cfg(test)]
mod tests;

pub use attention::{AttentionParams, BoundAttention};
pub use block::{BlockParams, BoundBlock};
pub use embed::{epoch_embedding, epoch_embedding_vec, orientation_embedding_vec};
pub use recurrent::{BiRecurrentParams, BoundBiRecurrent};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Additive logit used to realize -inf masking while staying finite.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("attention mask row {row} leaves no position unmasked")]
    FullyMaskedRow { row: usize },
    #[error("mask shape {mask:?} does not fit logits {n}x{m}")]
    MaskShape { mask: (usize, usize), n: usize, m: usize },
    #[error("width {got} does not match model width {want}")]
    Width { got: usize, want: usize },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Boolean attention mask: `allow[i*m + j]` says query row `i` may attend
/// to context row `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub n: usize,
    pub m: usize,
    pub allow: Vec<bool>,
}

impl Mask {
    pub fn new(n: usize, m: usize, allow: Vec<bool>) -> Self {
        assert_eq!(allow.len(), n * m);
        Mask { n, m, allow }
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.m + j]
    }
}

/// Lower-triangular causal mask: position `i` may attend to `j` iff `j <= i`.
pub fn causal_mask(t: usize) -> Mask {
    assert!(t >= 1, "causal mask needs at least one position");
    let mut allow = vec![false; t * t];
    for i in 0..t {
        for j in 0..=i {
            allow[i * t + j] = true;
        }
    }
    Mask { n: t, m: t, allow }
}

/// Arithmetic mean over the sequence (row) axis: `[n, d] -> [d]`.
pub fn avg_pool<'t>(x: Tensor<'t>) -> Result<Tensor<'t>> {
    Ok(x.mean_axis0()?)
}
