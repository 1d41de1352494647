//! Pre-norm transformer layer block: multi-head attention and a GELU MLP,
//! each behind a residual connection with its own layer normalization.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamSet, Tape, Tensor};

use super::{AttentionParams, BoundAttention, Mask, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub attn: AttentionParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub d: usize,
}

impl BlockParams {
    /// MLP hidden width is 4d.
    pub fn register(
        ps: &mut ParamSet,
        prefix: &str,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BlockParams {
            attn: AttentionParams::register(ps, &format!("{prefix}.attn"), d, heads, rng),
            w1: ps.register_xavier(format!("{prefix}.mlp.w1"), d, 4 * d, rng),
            b1: ps.register_const_vec(format!("{prefix}.mlp.b1"), 4 * d, 0.0),
            w2: ps.register_xavier(format!("{prefix}.mlp.w2"), 4 * d, d, rng),
            b2: ps.register_const_vec(format!("{prefix}.mlp.b2"), d, 0.0),
            ln1_gain: ps.register_const_vec(format!("{prefix}.ln1.gain"), d, 1.0),
            ln1_bias: ps.register_const_vec(format!("{prefix}.ln1.bias"), d, 0.0),
            ln2_gain: ps.register_const_vec(format!("{prefix}.ln2.gain"), d, 1.0),
            ln2_bias: ps.register_const_vec(format!("{prefix}.ln2.bias"), d, 0.0),
            d,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, ps: &ParamSet) -> BoundBlock<'t> {
        BoundBlock {
            attn: self.attn.bind(tape, ps),
            w1: tape.param(ps, self.w1),
            b1: tape.param(ps, self.b1),
            w2: tape.param(ps, self.w2),
            b2: tape.param(ps, self.b2),
            ln1_gain: tape.param(ps, self.ln1_gain),
            ln1_bias: tape.param(ps, self.ln1_bias),
            ln2_gain: tape.param(ps, self.ln2_gain),
            ln2_bias: tape.param(ps, self.ln2_bias),
        }
    }
}

pub struct BoundBlock<'t> {
    pub attn: BoundAttention<'t>,
    w1: Tensor<'t>,
    b1: Tensor<'t>,
    w2: Tensor<'t>,
    b2: Tensor<'t>,
    ln1_gain: Tensor<'t>,
    ln1_bias: Tensor<'t>,
    ln2_gain: Tensor<'t>,
    ln2_bias: Tensor<'t>,
}

impl<'t> BoundBlock<'t> {
    /// z = x' + MLP(LN2(x')) with x' = x + MHA(LN1(x), LN1(y)). Passing the
    /// same tensor for `x` and `y` gives self-attention; the key/value side
    /// reuses the normalized queries in that case.
    pub fn forward(
        &self,
        tape: &'t Tape,
        x: Tensor<'t>,
        y: Tensor<'t>,
        mask: Option<&Mask>,
    ) -> Result<Tensor<'t>> {
        let xq = x.layer_norm(self.ln1_gain, self.ln1_bias, LN_EPS)?;
        let ykv = if x.same_node(&y) {
            xq
        } else {
            y.layer_norm(self.ln1_gain, self.ln1_bias, LN_EPS)?
        };
        let attn = self.attn.multi_head(tape, xq, ykv, mask)?;
        let x1 = x.add(attn)?;
        let h = x1.layer_norm(self.ln2_gain, self.ln2_bias, LN_EPS)?;
        let mlp = h
            .matmul(self.w1)?
            .add_rowvec(self.b1)?
            .gelu()
            .matmul(self.w2)?
            .add_rowvec(self.b2)?;
        Ok(x1.add(mlp)?)
    }
}
