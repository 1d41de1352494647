//! Table-free sinusoidal embeddings for epoch indices and sub-view angles.

use crate::tensor::{Tape, Tensor};

/// Sinusoidal position code for epoch `t >= 1` (epoch 1 maps to position 0,
/// so its even components are 0 and odd components are 1). Components lie
/// in [-1, 1] and indices up to the episode horizon are pairwise distinct.
pub fn epoch_embedding_vec(t: usize, d: usize) -> Vec<f64> {
    assert!(t >= 1, "epochs are 1-based");
    let pos = (t - 1) as f64;
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = (pos * freq).sin();
        out[2 * i + 1] = (pos * freq).cos();
    }
    if d % 2 == 1 {
        let i = d / 2;
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
        out[d - 1] = (pos * freq).sin();
    }
    out
}

/// [`epoch_embedding_vec`] as a constant tensor on `tape`.
pub fn epoch_embedding<'t>(tape: &'t Tape, t: usize, d: usize) -> Tensor<'t> {
    tape.vector(epoch_embedding_vec(t, d))
}

/// Sinusoidal code of an orientation angle (radians): harmonic sin/cos
/// pairs, so each of the 12 sub-view directions gets a distinct, bounded
/// embedding.
pub fn orientation_embedding_vec(angle: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let k = (i + 1) as f64;
        out[2 * i] = (k * angle).sin();
        out[2 * i + 1] = (k * angle).cos();
    }
    if d % 2 == 1 {
        out[d - 1] = (((d / 2) + 1) as f64 * angle).sin();
    }
    out
}
