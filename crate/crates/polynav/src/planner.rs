//! Shared-trunk decoder and the action head.
//!
//! Goal queries attend over the episodic history through a decoder stack
//! whose first layers are shared by all task kinds and whose last layers
//! are private per task. The action head scores the 12 sub-views with a
//! bilinear form and fixes the stop logit at zero.

use rand_chacha::ChaCha8Rng;

use crate::encoder::ModalFeatures;
use crate::nn::{BlockParams, NnError};
use crate::tasks::TaskKind;
use crate::tensor::{ParamId, ParamSet, Tape, Tensor};
use crate::world::{NUM_ACTIONS, NUM_SUBVIEWS, STOP_ACTION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("task {0} is not instantiated in this model")]
    TaskNotInstantiated(TaskKind),
    #[error("action head produced non-finite logits")]
    NonFiniteLogits,
}

pub type Result<T> = std::result::Result<T, PlannerError>;

/// Decoder stack with `shared_depth` shared layers followed by
/// `depth - shared_depth` private layers per instantiated task, plus the
/// bilinear action projection and one value head per task.
#[derive(Debug, Clone)]
pub struct PlannerParams {
    pub shared: Vec<BlockParams>,
    /// Private block stacks in the order of `tasks`.
    pub private: Vec<Vec<BlockParams>>,
    pub tasks: Vec<TaskKind>,
    pub w_p: ParamId,
    /// Per-task value heads `(weight [d,1], bias [1])`, aligned with `tasks`.
    pub value_heads: Vec<(ParamId, ParamId)>,
    pub d: usize,
}

impl PlannerParams {
    pub fn register(
        ps: &mut ParamSet,
        d: usize,
        heads: usize,
        depth: usize,
        shared_depth: usize,
        tasks: &[TaskKind],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(shared_depth <= depth, "shared depth exceeds planner depth");
        let shared = (0..shared_depth)
            .map(|i| BlockParams::register(ps, &format!("planner.shared.{i}"), d, heads, rng))
            .collect();
        let private = tasks
            .iter()
            .map(|task| {
                (shared_depth..depth)
                    .map(|i| {
                        BlockParams::register(
                            ps,
                            &format!("planner.private.{}.{i}", task.name()),
                            d,
                            heads,
                            rng,
                        )
                    })
                    .collect()
            })
            .collect();
        let value_heads = tasks
            .iter()
            .map(|task| {
                (
                    ps.register_xavier(format!("value.{}.w", task.name()), d, 1, rng),
                    ps.register_const_vec(format!("value.{}.b", task.name()), 1, 0.0),
                )
            })
            .collect();
        PlannerParams {
            shared,
            private,
            tasks: tasks.to_vec(),
            w_p: ps.register_xavier("planner.w_p", d, d, rng),
            value_heads,
            d,
        }
    }

    pub fn task_slot(&self, task: TaskKind) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| *t == task)
            .ok_or(PlannerError::TaskNotInstantiated(task))
    }
}

/// Query the episodic history: goal queries pass through the shared blocks
/// and then the task's private blocks, cross-attending the history rows at
/// every layer.
pub fn plan<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    planner: &PlannerParams,
    queries: Tensor<'t>,
    history: Tensor<'t>,
    task: TaskKind,
) -> Result<Tensor<'t>> {
    let slot = planner.task_slot(task)?;
    let mut x = queries;
    for block in planner.shared.iter().chain(planner.private[slot].iter()) {
        x = block.bind(tape, ps).forward(tape, x, history, None)?;
    }
    Ok(x)
}

/// Differentiable action-head outputs for one epoch.
pub struct ActionScores<'t> {
    /// `[13]`; index 12 (stop) is exactly zero for any parameters.
    pub logits: Tensor<'t>,
    /// Scalar state-value estimate from the task's value head.
    pub value: Tensor<'t>,
}

/// Score the 12 sub-views plus stop. Each sub-view embedding stacks its
/// visual/depth/audio rows, mean-pools them to width d, and enters the
/// bilinear form `avg(C) W_p b_i`; the stop embedding is the zero vector,
/// pinning its logit to 0.
pub fn action_head<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    planner: &PlannerParams,
    context: Tensor<'t>,
    feats: &ModalFeatures<'t>,
    task: TaskKind,
) -> Result<ActionScores<'t>> {
    let slot = planner.task_slot(task)?;
    let pooled = context.mean_axis0()?.reshape(&[1, planner.d])?;
    let projected = pooled.matmul(tape.param(ps, planner.w_p))?;
    let mut logits = Vec::with_capacity(NUM_ACTIONS);
    for i in 0..NUM_SUBVIEWS {
        let b = Tensor::concat_rows(&[
            feats.visual.row(i)?,
            feats.depth.row(i)?,
            feats.audio.row(i)?,
        ])?
        .mean_axis0()?
        .reshape(&[planner.d, 1])?;
        logits.push(projected.matmul(b)?.reshape(&[1])?);
    }
    logits.push(tape.zeros(&[1]));
    let logits = Tensor::concat_flat(&logits)?;
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(PlannerError::NonFiniteLogits);
    }
    let (w, b) = planner.value_heads[slot];
    let value = pooled
        .matmul(tape.param(ps, w))?
        .reshape(&[1])?
        .add(tape.param(ps, b).reshape(&[1])?)?
        .reshape(&[1])?;
    Ok(ActionScores { logits, value })
}

/// Concrete per-epoch action distribution extracted from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: [f64; NUM_ACTIONS],
    pub logits: [f64; NUM_ACTIONS],
    pub value: f64,
}

impl ActionDistribution {
    pub fn from_scores(scores: &ActionScores<'_>) -> Result<Self> {
        let probs_t = scores.logits.softmax(0)?;
        let mut probs = [0.0; NUM_ACTIONS];
        let mut logits = [0.0; NUM_ACTIONS];
        probs.copy_from_slice(&probs_t.data());
        logits.copy_from_slice(&scores.logits.data());
        Ok(ActionDistribution {
            probs,
            logits,
            value: scores.value.item(),
        })
    }

    /// Sample an action index from the distribution.
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> usize {
        let u: f64 = rand::Rng::random_range(rng, 0.0..1.0);
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        STOP_ACTION
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        // Stable log-softmax over the stored logits.
        let mx = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = self.logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln() + mx;
        self.logits[action] - lse
    }
}

/// Greedy action selection; ties break toward the lowest index.
pub fn act_greedy(dist: &ActionDistribution) -> usize {
    let mut best = 0;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p > dist.probs[best] {
            best = i;
        }
    }
    best
}
