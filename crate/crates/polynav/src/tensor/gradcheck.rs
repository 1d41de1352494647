//! Central finite-difference oracle for gradient verification.
//!
//! These helpers are intentionally independent of the tape's backward pass:
//! they only rerun forward evaluations at perturbed inputs, so agreement
//! with analytic gradients is a genuine two-route check.

use super::param::{ParamId, ParamSet};

/// Default perturbation for central differences in float64.
pub const DEFAULT_H: f64 = 1e-5;

/// Central difference d loss / d params[id][index] where `loss` reruns the
/// full forward pass against the (temporarily perturbed) parameter set.
pub fn central_diff_param(
    params: &mut ParamSet,
    id: ParamId,
    index: usize,
    h: f64,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> f64 {
    let orig = params.entry(id).data[index];
    params.entry_mut(id).data[index] = orig + h;
    let up = loss(params);
    params.entry_mut(id).data[index] = orig - h;
    let down = loss(params);
    params.entry_mut(id).data[index] = orig;
    (up - down) / (2.0 * h)
}

/// Central difference against a plain input buffer.
pub fn central_diff_input(
    x: &mut [f64],
    index: usize,
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let orig = x[index];
    x[index] = orig + h;
    let up = loss(x);
    x[index] = orig - h;
    let down = loss(x);
    x[index] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error guarded against tiny magnitudes: |a-b| / max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}
