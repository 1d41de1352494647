//! Target parsing: modality target blocks, the augmented target embedding
//! with learnable task vectors, and online parsing into goal queries.

use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_goal_view, EncoderError, EncoderParams, ModalityMask};
use crate::nn::{AttentionParams, BiRecurrentParams, NnError};
use crate::tasks::{Instruction, TargetSpec, TaskKind};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor};
use crate::world::NUM_SUBVIEWS;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GoalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("instruction of {len} tokens exceeds the {max} row budget")]
    InstructionTooLong { len: usize, max: usize },
    #[error("audio-goal targets need the current epoch's audio features")]
    MissingLiveAudio,
    #[error("class tag {tag} out of range for {categories} categories")]
    BadClassTag { tag: usize, categories: usize },
}

pub type Result<T> = std::result::Result<T, GoalError>;

/// Learnable target-parser parameters: four task embeddings, the tag and
/// word tables, the instruction sequence encoder, and the per-head goal
/// query attentions (heads kept separate, one goal vector per head).
#[derive(Debug, Clone)]
pub struct GoalParams {
    /// Task embeddings in block order: image, audio, tag, language.
    pub tau: [ParamId; 4],
    pub class_table: ParamId,
    pub word_table: ParamId,
    pub lang_enc: BiRecurrentParams,
    pub heads: Vec<AttentionParams>,
    pub d: usize,
    /// Rows per modality block after padding.
    pub n_g: usize,
    /// Image-goal block rows before padding.
    pub n_i: usize,
    /// Instruction token cap.
    pub n_l: usize,
    pub categories: usize,
}

impl GoalParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        ps: &mut ParamSet,
        d: usize,
        parse_heads: usize,
        n_i: usize,
        n_l: usize,
        categories: usize,
        vocab: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n_g = n_i.max(NUM_SUBVIEWS).max(1).max(n_l);
        let scale = (1.0 / d as f64).sqrt();
        let tau = ["image", "audio", "tag", "language"].map(|name| {
            ps.register_uniform_vec(format!("goals.tau.{name}"), d, scale, rng)
        });
        GoalParams {
            tau,
            class_table: ps.register_xavier("goals.class_table", categories, d, rng),
            word_table: ps.register_xavier("goals.word_table", vocab, d, rng),
            lang_enc: BiRecurrentParams::register(ps, "goals.lang_enc", d, d / 2, rng),
            heads: (0..parse_heads)
                .map(|i| AttentionParams::register(ps, &format!("goals.parse.{i}"), d, 1, rng))
                .collect(),
            d,
            n_g,
            n_i,
            n_l,
            categories,
        }
    }
}

/// Per-modality target blocks before padding; `None` blocks are absent and
/// enter the augmented embedding as zeros.
pub struct TargetBlocks<'t> {
    pub image: Option<Tensor<'t>>,
    pub audio: Option<Tensor<'t>>,
    pub tag: Option<Tensor<'t>>,
    pub language: Option<Tensor<'t>>,
}

/// Encode the populated target variant through its modality encoder. Audio
/// targets are live: the caller passes the current epoch's encoded audio
/// rows, and the block is refreshed every epoch.
pub fn embed_target<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    enc: &EncoderParams,
    goals: &GoalParams,
    spec: &TargetSpec,
    live_audio: Option<Tensor<'t>>,
    mask: ModalityMask,
) -> Result<TargetBlocks<'t>> {
    let mut blocks = TargetBlocks {
        image: None,
        audio: None,
        tag: None,
        language: None,
    };
    match spec {
        TargetSpec::GoalView(view) => {
            let rows = encode_goal_view(tape, ps, enc, view, mask)?;
            blocks.image = Some(resample_rows(rows, goals.n_i)?);
        }
        TargetSpec::TargetSound => {
            blocks.audio = Some(live_audio.ok_or(GoalError::MissingLiveAudio)?);
        }
        TargetSpec::ClassTag(tag) => {
            if *tag >= goals.categories {
                return Err(GoalError::BadClassTag {
                    tag: *tag,
                    categories: goals.categories,
                });
            }
            let row = tape.param(ps, goals.class_table).row(*tag)?;
            blocks.tag = Some(row.reshape(&[1, goals.d])?);
        }
        TargetSpec::Instruction(ins) => {
            blocks.language = Some(embed_instruction(tape, ps, goals, ins)?);
        }
    }
    Ok(blocks)
}

fn embed_instruction<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    goals: &GoalParams,
    ins: &Instruction,
) -> Result<Tensor<'t>> {
    if ins.tokens.len() > goals.n_l {
        return Err(GoalError::InstructionTooLong {
            len: ins.tokens.len(),
            max: goals.n_l,
        });
    }
    let table = tape.param(ps, goals.word_table);
    let rows: Vec<Tensor<'t>> = ins
        .tokens
        .iter()
        .map(|&t| table.row(t as usize))
        .collect::<std::result::Result<_, _>>()?;
    let tokens = Tensor::concat_rows(&rows)?;
    Ok(goals.lang_enc.bind(tape, ps).forward(tape, tokens)?)
}

/// Pad or shrink a row block to exactly `target` rows: cyclic tiling when
/// growing (rows repeat in order), contiguous group means when shrinking.
pub fn resample_rows<'t>(x: Tensor<'t>, target: usize) -> Result<Tensor<'t>> {
    let rows = x.shape()[0];
    if rows == target {
        return Ok(x);
    }
    if rows < target {
        return cyclic_tile(x, target);
    }
    // Group-mean shrink: near-equal contiguous groups.
    let mut out = Vec::with_capacity(target);
    let mut start = 0;
    for g in 0..target {
        let end = ((g + 1) * rows).div_ceil(target).max(start + 1);
        out.push(x.slice_rows(start, end)?.mean_axis0()?);
        start = end;
    }
    Ok(Tensor::concat_rows(&out)?)
}

/// Cyclic tiling: row `i` of the result is row `i mod rows` of the input.
pub fn cyclic_tile<'t>(x: Tensor<'t>, target: usize) -> Result<Tensor<'t>> {
    let rows = x.shape()[0];
    debug_assert!(target >= rows);
    let full = target / rows;
    let rem = target % rows;
    let mut parts = vec![x; full];
    if rem > 0 {
        parts.push(x.slice_rows(0, rem)?);
    }
    Ok(Tensor::concat_rows(&parts)?)
}

/// The augmented target description embedding `[4*N_G, d]`: each modality
/// block padded to `N_G` rows by replication (absent blocks are zeros),
/// offset by its broadcast task embedding, concatenated in fixed order
/// (image | audio | tag | language).
pub fn build_augmented<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    goals: &GoalParams,
    blocks: &TargetBlocks<'t>,
) -> Result<Tensor<'t>> {
    let pad = |block: &Option<Tensor<'t>>, tau: ParamId| -> Result<Tensor<'t>> {
        let base = match block {
            Some(b) => resample_rows(*b, goals.n_g)?,
            None => tape.zeros(&[goals.n_g, goals.d]),
        };
        Ok(base.add_rowvec(tape.param(ps, tau))?)
    };
    let parts = [
        pad(&blocks.image, goals.tau[0])?,
        pad(&blocks.audio, goals.tau[1])?,
        pad(&blocks.tag, goals.tau[2])?,
        pad(&blocks.language, goals.tau[3])?,
    ];
    Ok(Tensor::concat_rows(&parts)?)
}

/// Pooled target description vector feeding the cross-modal fusion.
pub fn pooled_goal<'t>(augmented: Tensor<'t>) -> Result<Tensor<'t>> {
    Ok(augmented.mean_axis0()?)
}

/// Goal queries plus the per-head attention weights over the augmented
/// target rows (exported for inspection).
pub struct GoalQueries<'t> {
    /// `[N, d]`; row i is head i's goal vector.
    pub queries: Tensor<'t>,
    /// Per head: softmax weights over the `4*N_G` target rows.
    pub weights: Vec<Vec<f64>>,
}

/// Online target parsing: the pooled history queries the augmented target
/// through `N` separate full-width attention heads; each head's output is
/// one row of the result (heads are not concatenated).
pub fn parse_goals<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    goals: &GoalParams,
    pooled_history: Tensor<'t>,
    augmented: Tensor<'t>,
) -> Result<GoalQueries<'t>> {
    let q = pooled_history.reshape(&[1, goals.d])?;
    let mut rows = Vec::with_capacity(goals.heads.len());
    let mut weights = Vec::with_capacity(goals.heads.len());
    for head in &goals.heads {
        let (out, w) = head
            .bind(tape, ps)
            .attend_with_weights(tape, q, augmented, None)?;
        rows.push(out);
        weights.push(w.data().to_vec());
    }
    Ok(GoalQueries {
        queries: Tensor::concat_rows(&rows)?,
        weights,
    })
}

/// Block row counts per task kind before padding (image, audio, tag,
/// language); used by structural tests.
pub fn block_rows(goals: &GoalParams, kind: TaskKind, instruction_len: usize) -> usize {
    match kind {
        TaskKind::ImageGoal => goals.n_i,
        TaskKind::AudioGoal => NUM_SUBVIEWS,
        TaskKind::ObjectGoal => 1,
        TaskKind::VisionLanguage => instruction_len,
    }
}
