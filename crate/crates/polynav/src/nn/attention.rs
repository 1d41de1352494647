//! Scaled dot-product attention with learnable query/key/value projections
//! and an output projection.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamSet, Tape, Tensor};

use super::{Mask, NnError, Result, MASK_LOGIT};

/// Parameter handles for one attention module over width `d`, evaluated
/// either as a single attention function or split into `heads` heads.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub d: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn register(
        ps: &mut ParamSet,
        prefix: &str,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(heads >= 1 && d % heads == 0, "width {d} not divisible by {heads} heads");
        AttentionParams {
            w_q: ps.register_xavier(format!("{prefix}.w_q"), d, d, rng),
            w_k: ps.register_xavier(format!("{prefix}.w_k"), d, d, rng),
            w_v: ps.register_xavier(format!("{prefix}.w_v"), d, d, rng),
            w_o: ps.register_xavier(format!("{prefix}.w_o"), d, d, rng),
            d,
            heads,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, ps: &ParamSet) -> BoundAttention<'t> {
        BoundAttention {
            w_q: tape.param(ps, self.w_q),
            w_k: tape.param(ps, self.w_k),
            w_v: tape.param(ps, self.w_v),
            w_o: tape.param(ps, self.w_o),
            d: self.d,
            heads: self.heads,
        }
    }
}

/// Attention parameters materialized on a tape.
pub struct BoundAttention<'t> {
    pub w_q: Tensor<'t>,
    pub w_k: Tensor<'t>,
    pub w_v: Tensor<'t>,
    pub w_o: Tensor<'t>,
    pub d: usize,
    pub heads: usize,
}

/// Turn a boolean mask into additive logits, rejecting fully-masked rows.
fn mask_logits<'t>(tape: &'t Tape, mask: &Mask, n: usize, m: usize) -> Result<Tensor<'t>> {
    if mask.n != n || mask.m != m {
        return Err(NnError::MaskShape {
            mask: (mask.n, mask.m),
            n,
            m,
        });
    }
    let mut add = vec![0.0; n * m];
    for i in 0..n {
        let mut any = false;
        for j in 0..m {
            if mask.allows(i, j) {
                any = true;
            } else {
                add[i * m + j] = MASK_LOGIT;
            }
        }
        if !any {
            return Err(NnError::FullyMaskedRow { row: i });
        }
    }
    Ok(tape.constant(add, &[n, m])?)
}

impl<'t> BoundAttention<'t> {
    fn check_width(&self, x: Tensor<'t>) -> Result<()> {
        let s = x.shape();
        let got = *s.last().unwrap_or(&0);
        if got != self.d {
            return Err(NnError::Width { got, want: self.d });
        }
        Ok(())
    }

    /// Single attention function: queries `x[n,d]` attend over context
    /// `y[m,d]`, scaled by 1/sqrt(d); the weighted values pass through the
    /// output projection. Returns a tensor with the same length and width
    /// as `x`.
    pub fn attend(
        &self,
        tape: &'t Tape,
        x: Tensor<'t>,
        y: Tensor<'t>,
        mask: Option<&Mask>,
    ) -> Result<Tensor<'t>> {
        Ok(self.attend_with_weights(tape, x, y, mask)?.0)
    }

    /// As [`BoundAttention::attend`], also returning the post-softmax
    /// attention weights `[n, m]` for inspection.
    pub fn attend_with_weights(
        &self,
        tape: &'t Tape,
        x: Tensor<'t>,
        y: Tensor<'t>,
        mask: Option<&Mask>,
    ) -> Result<(Tensor<'t>, Tensor<'t>)> {
        self.check_width(x)?;
        self.check_width(y)?;
        let q = x.matmul(self.w_q)?;
        let k = y.matmul(self.w_k)?;
        let v = y.matmul(self.w_v)?;
        let (out, w) = scaled_attention(tape, q, k, v, self.d, mask)?;
        Ok((out.matmul(self.w_o)?, w))
    }

    /// Multi-head attention: the projected queries/keys/values are split
    /// into `heads` column groups, attended independently at 1/sqrt(d/H)
    /// scale, concatenated, and output-projected. With one head this equals
    /// [`BoundAttention::attend`] exactly.
    pub fn multi_head(
        &self,
        tape: &'t Tape,
        x: Tensor<'t>,
        y: Tensor<'t>,
        mask: Option<&Mask>,
    ) -> Result<Tensor<'t>> {
        self.check_width(x)?;
        self.check_width(y)?;
        let q = x.matmul(self.w_q)?;
        let k = y.matmul(self.w_k)?;
        let v = y.matmul(self.w_v)?;
        let dh = self.d / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let (oh, _) = scaled_attention(
                tape,
                q.slice_cols(c0, c1)?,
                k.slice_cols(c0, c1)?,
                v.slice_cols(c0, c1)?,
                dh,
                mask,
            )?;
            outs.push(oh);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            Tensor::concat_cols(&outs)?
        };
        Ok(cat.matmul(self.w_o)?)
    }
}

/// softmax(q kᵀ / sqrt(scale_dim) + mask) v, returning (output, weights).
pub(crate) fn scaled_attention<'t>(
    tape: &'t Tape,
    q: Tensor<'t>,
    k: Tensor<'t>,
    v: Tensor<'t>,
    scale_dim: usize,
    mask: Option<&Mask>,
) -> Result<(Tensor<'t>, Tensor<'t>)> {
    let n = q.shape()[0];
    let m = k.shape()[0];
    let mut logits = q
        .matmul(k.transpose()?)?
        .scale(1.0 / (scale_dim as f64).sqrt());
    if let Some(mask) = mask {
        let add = mask_logits(tape, mask, n, m)?;
        logits = logits.add(add)?;
    }
    let weights = logits.softmax(1)?;
    Ok((weights.matmul(v)?, weights))
}
