//! Bidirectional LSTM sequence encoder used for instruction embeddings.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamSet, Tape, Tensor};

use super::Result;

/// One LSTM direction: input and recurrent weights for the four gates
/// (input, forget, cell, output) packed along columns.
#[derive(Debug, Clone)]
struct LstmDir {
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
}

impl LstmDir {
    fn register(ps: &mut ParamSet, prefix: &str, d_in: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmDir {
            w_x: ps.register_xavier(format!("{prefix}.w_x"), d_in, 4 * h, rng),
            w_h: ps.register_xavier(format!("{prefix}.w_h"), h, 4 * h, rng),
            bias: ps.register_const_vec(format!("{prefix}.bias"), 4 * h, 0.0),
        }
    }
}

/// Parameters of a bidirectional recurrent encoder mapping a token-vector
/// sequence `[L, d_in]` to `[L, 2h]`; choose `h = d/2` to land on width d.
#[derive(Debug, Clone)]
pub struct BiRecurrentParams {
    fwd: LstmDir,
    bwd: LstmDir,
    pub d_in: usize,
    pub hidden: usize,
}

impl BiRecurrentParams {
    pub fn register(
        ps: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BiRecurrentParams {
            fwd: LstmDir::register(ps, &format!("{prefix}.fwd"), d_in, hidden, rng),
            bwd: LstmDir::register(ps, &format!("{prefix}.bwd"), d_in, hidden, rng),
            d_in,
            hidden,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, ps: &ParamSet) -> BoundBiRecurrent<'t> {
        BoundBiRecurrent {
            fwd: (
                tape.param(ps, self.fwd.w_x),
                tape.param(ps, self.fwd.w_h),
                tape.param(ps, self.fwd.bias),
            ),
            bwd: (
                tape.param(ps, self.bwd.w_x),
                tape.param(ps, self.bwd.w_h),
                tape.param(ps, self.bwd.bias),
            ),
            hidden: self.hidden,
        }
    }
}

pub struct BoundBiRecurrent<'t> {
    fwd: (Tensor<'t>, Tensor<'t>, Tensor<'t>),
    bwd: (Tensor<'t>, Tensor<'t>, Tensor<'t>),
    hidden: usize,
}

impl<'t> BoundBiRecurrent<'t> {
    /// Encode `tokens[L, d_in]` into `[L, 2h]`: forward-pass hidden states
    /// concatenated with backward-pass hidden states per position.
    pub fn forward(&self, tape: &'t Tape, tokens: Tensor<'t>) -> Result<Tensor<'t>> {
        let l = tokens.shape()[0];
        let fwd = self.run_dir(tape, tokens, l, false)?;
        let bwd = self.run_dir(tape, tokens, l, true)?;
        let mut rows = Vec::with_capacity(l);
        for i in 0..l {
            let b = &bwd[l - 1 - i];
            rows.push(Tensor::concat_cols(&[fwd[i], *b])?);
        }
        Ok(Tensor::concat_rows(&rows)?)
    }

    fn run_dir(
        &self,
        tape: &'t Tape,
        tokens: Tensor<'t>,
        l: usize,
        reverse: bool,
    ) -> Result<Vec<Tensor<'t>>> {
        let (w_x, w_h, bias) = if reverse { self.bwd } else { self.fwd };
        let h = self.hidden;
        let mut hidden = tape.zeros(&[1, h]);
        let mut cell = tape.zeros(&[1, h]);
        let mut outs = Vec::with_capacity(l);
        for step in 0..l {
            let idx = if reverse { l - 1 - step } else { step };
            let x = tokens.slice_rows(idx, idx + 1)?;
            let gates = x
                .matmul(w_x)?
                .add(hidden.matmul(w_h)?)?
                .add_rowvec(bias)?;
            let i_g = gates.slice_cols(0, h)?.sigmoid();
            let f_g = gates.slice_cols(h, 2 * h)?.sigmoid();
            let g_g = gates.slice_cols(2 * h, 3 * h)?.tanh();
            let o_g = gates.slice_cols(3 * h, 4 * h)?.sigmoid();
            cell = f_g.mul(cell)?.add(i_g.mul(g_g)?)?;
            hidden = o_g.mul(cell.tanh())?;
            outs.push(hidden);
        }
        Ok(outs)
    }
}
