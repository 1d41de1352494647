//! Perception encoders: per-modality feature maps with orientation codes,
//! target-guided cross-modal fusion, multisensory integration, navigation
//! tokens, and the causal episodic history encoder.
//!
//! Everything here is stateless given parameters; the incremental
//! [`HistoryCache`] is rollout-local.

use rand_chacha::ChaCha8Rng;

use crate::nn::{
    avg_pool, causal_mask, epoch_embedding_vec, orientation_embedding_vec, AttentionParams,
    BlockParams, NnError,
};
use crate::tasks::MAX_EPOCHS;
use crate::tensor::{ParamId, ParamSet, Tape, Tensor};
use crate::world::{Mat, Panorama, NUM_ACTIONS, NUM_SUBVIEWS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("history of {0} tokens exceeds the {MAX_EPOCHS}-epoch horizon")]
    HorizonExceeded(usize),
    #[error("panorama feature width {got} does not match encoder input {want}")]
    FeatureWidth { got: usize, want: usize },
}

pub type Result<T> = std::result::Result<T, EncoderError>;

/// Which modalities the agent may perceive: `[rgb, depth, audio]`. A masked
/// modality is zeroed right after encoding, which zeroes its fused vector
/// downstream while keeping every shape intact.
pub type ModalityMask = [bool; 3];

pub const ALL_MODALITIES: ModalityMask = [true, true, true];

/// Two affine maps with a smooth nonlinearity between; the desk-scale
/// stand-in for a deep visual backbone.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub d_in: usize,
}

impl FeatureMap {
    fn register(ps: &mut ParamSet, prefix: &str, d_in: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        FeatureMap {
            w1: ps.register_xavier(format!("{prefix}.w1"), d_in, d, rng),
            b1: ps.register_const_vec(format!("{prefix}.b1"), d, 0.0),
            w2: ps.register_xavier(format!("{prefix}.w2"), d, d, rng),
            b2: ps.register_const_vec(format!("{prefix}.b2"), d, 0.0),
            d_in,
        }
    }

    /// Apply row-wise: `[n, d_in] -> [n, d]`.
    pub fn forward<'t>(&self, tape: &'t Tape, ps: &ParamSet, x: Tensor<'t>) -> Result<Tensor<'t>> {
        let got = *x.shape().last().unwrap();
        if got != self.d_in {
            return Err(EncoderError::FeatureWidth {
                got,
                want: self.d_in,
            });
        }
        Ok(x
            .matmul(tape.param(ps, self.w1))?
            .add_rowvec(tape.param(ps, self.b1))?
            .gelu()
            .matmul(tape.param(ps, self.w2))?
            .add_rowvec(tape.param(ps, self.b2))?)
    }
}

/// All encoder-side parameters.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub img: FeatureMap,
    pub dep: FeatureMap,
    pub aud: FeatureMap,
    /// Target-guided cross-modal attention, one per modality.
    pub fuse_img: AttentionParams,
    pub fuse_dep: AttentionParams,
    pub fuse_aud: AttentionParams,
    /// Two self-attention blocks integrating the three fused vectors.
    pub msi: Vec<BlockParams>,
    /// Projects `[o_t, a_prev]` (4d) to the navigation token (d).
    pub token_proj: ParamId,
    /// Embeddings for the 13 actions plus a start-of-episode row.
    pub action_table: ParamId,
    pub start_embed: ParamId,
    /// Four causal self-attention blocks over the token history.
    pub ehe: Vec<BlockParams>,
    pub d: usize,
}

impl EncoderParams {
    pub fn register(
        ps: &mut ParamSet,
        d: usize,
        heads: usize,
        f_v: usize,
        f_d: usize,
        f_a: usize,
        msi_depth: usize,
        ehe_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        EncoderParams {
            img: FeatureMap::register(ps, "encoder.img", f_v, d, rng),
            dep: FeatureMap::register(ps, "encoder.dep", f_d, d, rng),
            aud: FeatureMap::register(ps, "encoder.aud", 2 * f_a, d, rng),
            fuse_img: AttentionParams::register(ps, "encoder.fuse.img", d, 1, rng),
            fuse_dep: AttentionParams::register(ps, "encoder.fuse.dep", d, 1, rng),
            fuse_aud: AttentionParams::register(ps, "encoder.fuse.aud", d, 1, rng),
            msi: (0..msi_depth)
                .map(|i| BlockParams::register(ps, &format!("encoder.msi.{i}"), d, heads, rng))
                .collect(),
            token_proj: ps.register_xavier("encoder.token_proj", 4 * d, d, rng),
            action_table: ps.register_xavier("encoder.action_table", NUM_ACTIONS, d, rng),
            start_embed: {
                let a = (6.0 / (1 + d) as f64).sqrt();
                let data = (0..d).map(|_| rand::Rng::random_range(rng, -a..a)).collect();
                ps.register("encoder.start_embed", &[d], data)
            },
            ehe: (0..ehe_depth)
                .map(|i| BlockParams::register(ps, &format!("encoder.ehe.{i}"), d, heads, rng))
                .collect(),
            d,
        }
    }
}

/// Per-sub-view embeddings of the three modalities, orientation included.
/// Row `i` of each tensor corresponds to sub-view `i`.
pub struct ModalFeatures<'t> {
    pub visual: Tensor<'t>,
    pub depth: Tensor<'t>,
    pub audio: Tensor<'t>,
}

/// Orientation code matrix shared by all modalities: `[12, d]`.
fn orientation_rows<'t>(tape: &'t Tape, d: usize) -> Tensor<'t> {
    let mut data = Vec::with_capacity(NUM_SUBVIEWS * d);
    for k in 0..NUM_SUBVIEWS {
        let angle = k as f64 * std::f64::consts::TAU / NUM_SUBVIEWS as f64;
        data.extend(orientation_embedding_vec(angle, d));
    }
    tape.constant(data, &[NUM_SUBVIEWS, d]).expect("static shape")
}

fn mat_tensor<'t>(tape: &'t Tape, m: &Mat) -> Tensor<'t> {
    tape.constant(m.data.clone(), &[m.rows, m.cols])
        .expect("matrix shape is consistent")
}

/// Interleave the two audio channels into `[12, 2*F_a]` rows.
fn audio_rows(pano: &Panorama) -> Mat {
    let f_a = pano.audio_left.cols;
    let mut out = Mat::zeros(NUM_SUBVIEWS, 2 * f_a);
    for k in 0..NUM_SUBVIEWS {
        out.row_mut(k)[..f_a].copy_from_slice(pano.audio_left.row(k));
        out.row_mut(k)[f_a..].copy_from_slice(pano.audio_right.row(k));
    }
    out
}

/// Encode a panorama into per-sub-view width-d features per modality, add
/// sinusoidal orientation embeddings of the sub-view angles, then zero any
/// masked modality.
pub fn encode_modalities<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    pano: &Panorama,
    mask: ModalityMask,
) -> Result<ModalFeatures<'t>> {
    let orient = orientation_rows(tape, enc.d);
    let encode = |fm: &FeatureMap, raw: Tensor<'t>, on: bool| -> Result<Tensor<'t>> {
        let feats = fm.forward(tape, ps, raw)?.add(orient)?;
        Ok(if on { feats } else { feats.scale(0.0) })
    };
    Ok(ModalFeatures {
        visual: encode(&enc.img, mat_tensor(tape, &pano.rgb), mask[0])?,
        depth: encode(&enc.dep, mat_tensor(tape, &pano.depth), mask[1])?,
        audio: encode(&enc.aud, mat_tensor(tape, &audio_rows(pano)), mask[2])?,
    })
}

/// Encode a raw goal-view feature block the same way the live visual
/// channel is encoded (shared parameters, orientation included).
pub fn encode_goal_view<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    view: &Mat,
    mask: ModalityMask,
) -> Result<Tensor<'t>> {
    let orient = orientation_rows(tape, enc.d);
    let feats = enc.img.forward(tape, ps, mat_tensor(tape, view))?.add(orient)?;
    Ok(if mask[0] { feats } else { feats.scale(0.0) })
}

/// Target-guided cross-modal fusion: the pooled target vector queries each
/// modality's 12 sub-view rows separately.
pub fn target_guided_fuse<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    g: Tensor<'t>,
    feats: &ModalFeatures<'t>,
) -> Result<(Tensor<'t>, Tensor<'t>, Tensor<'t>)> {
    let q = g.reshape(&[1, enc.d])?;
    let fuse = |attn: &AttentionParams, y: Tensor<'t>| -> Result<Tensor<'t>> {
        Ok(attn.bind(tape, ps).attend(tape, q, y, None)?.reshape(&[enc.d])?)
    };
    Ok((
        fuse(&enc.fuse_img, feats.visual)?,
        fuse(&enc.fuse_dep, feats.depth)?,
        fuse(&enc.fuse_aud, feats.audio)?,
    ))
}

/// Multisensory integration: self-attention over the three fused vectors
/// through the MSI block stack. No position codes, so permuting identical
/// inputs is a symmetry.
pub fn msi<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    fused: (Tensor<'t>, Tensor<'t>, Tensor<'t>),
) -> Result<Tensor<'t>> {
    let mut x = Tensor::concat_rows(&[fused.0, fused.1, fused.2])?;
    for block in &enc.msi {
        x = block.bind(tape, ps).forward(tape, x, x, None)?;
    }
    Ok(x)
}

/// Embedding of the previous action; the first epoch uses the dedicated
/// start-of-episode embedding.
pub fn prev_action_embed<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    prev: Option<usize>,
) -> Result<Tensor<'t>> {
    Ok(match prev {
        Some(a) => tape.param(ps, enc.action_table).row(a)?,
        None => tape.param(ps, enc.start_embed),
    })
}

/// Navigation token: `[o_t, a_prev]` (flattened to 4d) projected to d.
pub fn make_token<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    o_t: Tensor<'t>,
    a_prev: Tensor<'t>,
) -> Result<Tensor<'t>> {
    let flat = Tensor::concat_flat(&[o_t, a_prev])?.reshape(&[1, 4 * enc.d])?;
    Ok(flat
        .matmul(tape.param(ps, enc.token_proj))?
        .reshape(&[enc.d])?)
}

/// Full-sequence episodic history encoding: tokens plus epoch embeddings
/// through the causal block stack. Row `i` of the result depends only on
/// tokens `1..=i`.
pub fn encode_history<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    tokens: &[Tensor<'t>],
) -> Result<Tensor<'t>> {
    let t = tokens.len();
    assert!(t >= 1, "history needs at least one token");
    if t > MAX_EPOCHS {
        return Err(EncoderError::HorizonExceeded(t));
    }
    let rows: Vec<Tensor<'t>> = tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let mu = tape.vector(epoch_embedding_vec(i + 1, enc.d));
            tok.add(mu)
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut x = Tensor::concat_rows(&rows)?;
    let mask = causal_mask(t);
    for block in &enc.ehe {
        x = block.bind(tape, ps).forward(tape, x, x, Some(&mask))?;
    }
    Ok(x)
}

/// Rollout-local incremental history state: cached per-layer keys/values
/// and encoded rows, so appending epoch `t` costs O(t) instead of O(t^2).
/// Values agree with [`encode_history`] row-for-row.
#[derive(Debug, Clone)]
pub struct HistoryCache {
    /// Per EHE layer: cached key/value rows (post layer-norm projections).
    layer_k: Vec<Mat>,
    layer_v: Vec<Mat>,
    /// Encoded rows so far.
    rows: Mat,
    /// Running sum of encoded rows for O(d) pooled history.
    row_sum: Vec<f64>,
    t: usize,
    d: usize,
}

impl HistoryCache {
    pub fn new(enc: &EncoderParams) -> Self {
        let depth = enc.ehe.len();
        HistoryCache {
            layer_k: (0..depth).map(|_| Mat::zeros(0, enc.d)).collect(),
            layer_v: (0..depth).map(|_| Mat::zeros(0, enc.d)).collect(),
            rows: Mat::zeros(0, enc.d),
            row_sum: vec![0.0; enc.d],
            t: 0,
            d: enc.d,
        }
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    /// Encoded history `[t, d]` as a constant on `tape`.
    pub fn rows_tensor<'t>(&self, tape: &'t Tape) -> Tensor<'t> {
        tape.constant(self.rows.data.clone(), &[self.t, self.d])
            .expect("cache shape")
    }

    /// Pooled history mean as a constant on `tape`.
    pub fn pooled_tensor<'t>(&self, tape: &'t Tape) -> Tensor<'t> {
        let mean: Vec<f64> = self.row_sum.iter().map(|s| s / self.t as f64).collect();
        tape.vector(mean)
    }

    /// Append the navigation token for epoch `t+1` and return the new
    /// encoded row.
    pub fn push<'t>(
        &mut self,
        tape: &'t Tape,
        ps: &ParamSet,
        enc: &EncoderParams,
        token: Tensor<'t>,
    ) -> Result<Tensor<'t>> {
        if self.t + 1 > MAX_EPOCHS {
            return Err(EncoderError::HorizonExceeded(self.t + 1));
        }
        let epoch = self.t + 1;
        let mu = tape.vector(epoch_embedding_vec(epoch, self.d));
        let mut x = token.add(mu)?.reshape(&[1, self.d])?;
        for (l, block) in enc.ehe.iter().enumerate() {
            let b = block.bind(tape, ps);
            let xq = x.layer_norm(
                tape.param(ps, block.ln1_gain),
                tape.param(ps, block.ln1_bias),
                1e-5,
            )?;
            let q = xq.matmul(b.attn.w_q)?;
            let k_new = xq.matmul(b.attn.w_k)?;
            let v_new = xq.matmul(b.attn.w_v)?;
            // Keys/values over the full prefix including this token.
            let k_all = append_row_tensor(tape, &self.layer_k[l], &k_new);
            let v_all = append_row_tensor(tape, &self.layer_v[l], &v_new);
            let heads = b.attn.heads;
            let dh = self.d / heads;
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let (c0, c1) = (h * dh, (h + 1) * dh);
                let qh = q.slice_cols(c0, c1)?;
                let kh = k_all.slice_cols(c0, c1)?;
                let vh = v_all.slice_cols(c0, c1)?;
                let logits = qh
                    .matmul(kh.transpose()?)?
                    .scale(1.0 / (dh as f64).sqrt());
                let w = logits.softmax(1)?;
                outs.push(w.matmul(vh)?);
            }
            let cat = if outs.len() == 1 {
                outs[0]
            } else {
                Tensor::concat_cols(&outs)?
            };
            let attn_out = cat.matmul(b.attn.w_o)?;
            let x1 = x.add(attn_out)?;
            let h = x1.layer_norm(
                tape.param(ps, block.ln2_gain),
                tape.param(ps, block.ln2_bias),
                1e-5,
            )?;
            let mlp = h
                .matmul(tape.param(ps, block.w1))?
                .add_rowvec(tape.param(ps, block.b1))?
                .gelu()
                .matmul(tape.param(ps, block.w2))?
                .add_rowvec(tape.param(ps, block.b2))?;
            push_row(&mut self.layer_k[l], &k_new.data());
            push_row(&mut self.layer_v[l], &v_new.data());
            x = x1.add(mlp)?;
        }
        let row = x.reshape(&[self.d])?;
        let data = row.data();
        push_row(&mut self.rows, &data);
        for (s, v) in self.row_sum.iter_mut().zip(data.iter()) {
            *s += v;
        }
        self.t += 1;
        Ok(row)
    }
}

fn push_row(m: &mut Mat, row: &[f64]) {
    debug_assert_eq!(m.cols, row.len());
    m.data.extend_from_slice(row);
    m.rows += 1;
}

/// Cached rows plus one new `[1, d]` row as a single constant-backed
/// tensor (the new row keeps its tape lineage only through the copy, which
/// is fine on the no-grad rollout path).
fn append_row_tensor<'t>(tape: &'t Tape, cached: &Mat, new_row: &Tensor<'t>) -> Tensor<'t> {
    let mut data = Vec::with_capacity((cached.rows + 1) * cached.cols);
    data.extend_from_slice(&cached.data);
    data.extend_from_slice(&new_row.data());
    tape.constant(data, &[cached.rows + 1, cached.cols])
        .expect("cache shape")
}

/// Average pooling re-exported for history prefixes.
pub fn pooled_history<'t>(history: Tensor<'t>) -> Result<Tensor<'t>> {
    Ok(avg_pool(history)?)
}
