//! The complete parse-and-query policy: configuration, parameter
//! assembly, the incremental per-epoch forward used during rollouts, and
//! the batched full-episode forward used during policy optimization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_history, encode_modalities, make_token, msi, prev_action_embed, target_guided_fuse,
    EncoderError, EncoderParams, HistoryCache, ModalFeatures, ModalityMask, ALL_MODALITIES,
};
use crate::goals::{
    build_augmented, embed_target, parse_goals, pooled_goal, GoalError, GoalParams,
};
use crate::planner::{
    act_greedy, action_head, plan, ActionDistribution, PlannerError, PlannerParams,
};
use crate::tasks::{Episode, TargetSpec, TaskKind, Trajectory, MAX_EPOCHS};
use crate::tensor::{ParamSet, Tape, Tensor, TensorError};
use crate::world::{render_panorama, step, AgentPose, Mat, Panorama, WorldError, STOP_ACTION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Goals(#[from] GoalError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Task(#[from] crate::tasks::TaskError),
    #[error("episode exceeded its {0}-epoch horizon")]
    HorizonExceeded(usize),
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// Model hyperparameters. The desk preset keeps every contract of the
/// full-scale configuration at a width that trains on CPU cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width d (must be divisible by `heads` and even).
    pub d: usize,
    /// Head count for MSI/history/planner blocks.
    pub heads: usize,
    /// Number of goal queries N (diversified target parsing).
    pub parse_heads: usize,
    /// Image-goal target rows.
    pub n_i: usize,
    /// Instruction token cap.
    pub n_l: usize,
    pub msi_depth: usize,
    pub ehe_depth: usize,
    pub planner_depth: usize,
    /// Leading planner layers shared across tasks (0..=planner_depth).
    pub shared_depth: usize,
    pub f_v: usize,
    pub f_d: usize,
    pub f_a: usize,
    pub categories: usize,
    pub vocab: usize,
    /// Instantiated task subset.
    pub tasks: Vec<TaskKind>,
    pub modality_mask: ModalityMask,
}

impl ModelConfig {
    /// Desk-scale defaults: d = 64, 4 heads, N = 5, 2-shared trunk.
    pub fn desk() -> Self {
        ModelConfig {
            d: 64,
            heads: 4,
            parse_heads: 5,
            n_i: 4,
            n_l: 24,
            msi_depth: 2,
            ehe_depth: 4,
            planner_depth: 4,
            shared_depth: 2,
            f_v: 16,
            f_d: 16,
            f_a: 8,
            categories: 8,
            vocab: crate::tasks::VOCAB_SIZE,
            tasks: TaskKind::ALL.to_vec(),
            modality_mask: ALL_MODALITIES,
        }
    }

    /// Full-scale preset (d = 512, N_I = 16, N_L = 120); kept for parameter
    /// accounting and configuration parity, not for CPU training.
    pub fn paper_scale() -> Self {
        ModelConfig {
            d: 512,
            n_i: 16,
            n_l: 120,
            categories: 21,
            ..ModelConfig::desk()
        }
    }

    pub fn n_g(&self) -> usize {
        self.n_i.max(crate::world::NUM_SUBVIEWS).max(1).max(self.n_l)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.d % self.heads != 0 {
            return Err(format!("d={} not divisible by heads={}", self.d, self.heads));
        }
        if self.d % 2 != 0 {
            return Err("d must be even for the bidirectional encoder".into());
        }
        if self.shared_depth > self.planner_depth {
            return Err(format!(
                "shared_depth={} exceeds planner_depth={}",
                self.shared_depth, self.planner_depth
            ));
        }
        if self.tasks.is_empty() {
            return Err("task subset must be nonempty".into());
        }
        if self.parse_heads == 0 {
            return Err("need at least one goal query head".into());
        }
        Ok(())
    }
}

/// All parameter handles of one agent.
#[derive(Debug, Clone)]
pub struct AgentParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub goals: GoalParams,
    pub planner: PlannerParams,
}

impl AgentParams {
    /// Register every parameter in a deterministic order and initialize
    /// from the seed.
    pub fn init(config: ModelConfig, seed: u64) -> (AgentParams, ParamSet) {
        config.validate().expect("invalid model config");
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::register(
            &mut ps,
            config.d,
            config.heads,
            config.f_v,
            config.f_d,
            config.f_a,
            config.msi_depth,
            config.ehe_depth,
            &mut rng,
        );
        let goals = GoalParams::register(
            &mut ps,
            config.d,
            config.parse_heads,
            config.n_i,
            config.n_l,
            config.categories,
            config.vocab,
            &mut rng,
        );
        let planner = PlannerParams::register(
            &mut ps,
            config.d,
            config.heads,
            config.planner_depth,
            config.shared_depth,
            &config.tasks,
            &mut rng,
        );
        (
            AgentParams {
                config,
                encoder,
                goals,
                planner,
            },
            ps,
        )
    }
}

/// Target embedding state for the current epoch: the augmented target
/// matrix and its pooled vector.
struct TargetState<'t> {
    augmented: Tensor<'t>,
    pooled: Tensor<'t>,
}

fn build_target_state<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    agent: &AgentParams,
    target: &TargetSpec,
    live_audio: Option<Tensor<'t>>,
) -> Result<TargetState<'t>> {
    let blocks = embed_target(
        tape,
        ps,
        &agent.encoder,
        &agent.goals,
        target,
        live_audio,
        agent.config.modality_mask,
    )?;
    let augmented = build_augmented(tape, ps, &agent.goals, &blocks)?;
    let pooled = pooled_goal(augmented)?;
    Ok(TargetState { augmented, pooled })
}

/// Everything the policy emits for one epoch.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub dist: ActionDistribution,
    /// Per parse head: attention weights over the augmented target rows.
    pub parse_weights: Vec<Vec<f64>>,
}

/// Rollout-local episode state: agent pose, incremental history cache, and
/// the cached static target. One per live episode per worker.
pub struct EpisodeRun<'a> {
    pub agent: &'a AgentParams,
    pub ps: &'a ParamSet,
    pub episode: &'a Episode,
    pub pose: AgentPose,
    pub epoch: usize,
    history: HistoryCache,
    prev_action: Option<usize>,
    /// `(augmented, pooled)` target payload, cached for static targets.
    static_target: Option<(Mat, Vec<f64>)>,
    pub trajectory: Trajectory,
}

impl<'a> EpisodeRun<'a> {
    pub fn new(agent: &'a AgentParams, ps: &'a ParamSet, episode: &'a Episode) -> Self {
        EpisodeRun {
            agent,
            ps,
            episode,
            pose: episode.start,
            epoch: 0,
            history: HistoryCache::new(&agent.encoder),
            prev_action: None,
            static_target: None,
            trajectory: Trajectory::start(episode.start),
        }
    }

    /// Observe, advance the history by one navigation token, and produce
    /// the action distribution for this epoch.
    pub fn policy(&mut self) -> Result<(PolicyOutput, Panorama)> {
        let horizon = self.episode.max_epochs.min(MAX_EPOCHS);
        if self.epoch >= horizon {
            return Err(AgentError::HorizonExceeded(horizon));
        }
        let pano = render_panorama(&self.episode.world, &self.pose)?;
        let tape = Tape::no_grad();
        let out = self.policy_on_tape(&tape, &pano)?;
        self.epoch += 1;
        Ok((out, pano))
    }

    fn policy_on_tape<'t>(&mut self, tape: &'t Tape, pano: &Panorama) -> Result<PolicyOutput> {
        let agent = self.agent;
        let ps = self.ps;
        let feats = encode_modalities(tape, ps, &agent.encoder, pano, agent.config.modality_mask)?;

        // Target: audio targets are refreshed from the live stream; the
        // other kinds are cached after the first epoch.
        let target = if self.episode.task == TaskKind::AudioGoal {
            build_target_state(tape, ps, agent, &self.episode.target, Some(feats.audio))?
        } else if let Some((aug, pooled)) = &self.static_target {
            TargetState {
                augmented: tape.constant(aug.data.clone(), &[aug.rows, aug.cols])?,
                pooled: tape.vector(pooled.clone()),
            }
        } else {
            let t = build_target_state(tape, ps, agent, &self.episode.target, None)?;
            let aug_shape = t.augmented.shape();
            self.static_target = Some((
                Mat {
                    rows: aug_shape[0],
                    cols: aug_shape[1],
                    data: t.augmented.data().to_vec(),
                },
                t.pooled.data().to_vec(),
            ));
            t
        };

        let fused = target_guided_fuse(tape, ps, &agent.encoder, target.pooled, &feats)?;
        let o_t = msi(tape, ps, &agent.encoder, fused)?;
        let a_prev = prev_action_embed(tape, ps, &agent.encoder, self.prev_action)?;
        let token = make_token(tape, ps, &agent.encoder, o_t, a_prev)?;
        self.history.push(tape, ps, &agent.encoder, token)?;

        let pooled_hist = self.history.pooled_tensor(tape);
        let queries = parse_goals(tape, ps, &agent.goals, pooled_hist, target.augmented)?;
        let history_rows = self.history.rows_tensor(tape);
        let context = plan(
            tape,
            ps,
            &agent.planner,
            queries.queries,
            history_rows,
            self.episode.task,
        )?;
        let scores = action_head(tape, ps, &agent.planner, context, &feats, self.episode.task)?;
        Ok(PolicyOutput {
            dist: ActionDistribution::from_scores(&scores)?,
            parse_weights: queries.weights,
        })
    }

    /// Apply an action in the world and record it.
    pub fn advance(&mut self, action: usize) -> AgentPose {
        let out = step(&self.episode.world, &self.pose, action);
        self.prev_action = Some(action);
        self.pose = out.pose;
        self.trajectory.push(action, out.pose, out.collided);
        out.pose
    }

    pub fn done(&self) -> bool {
        self.trajectory
            .actions
            .last()
            .is_some_and(|a| *a == STOP_ACTION)
            || self.epoch >= self.episode.max_epochs.min(MAX_EPOCHS)
    }
}

/// Greedy evaluation of one episode; returns the walked trajectory.
pub fn run_greedy(agent: &AgentParams, ps: &ParamSet, episode: &Episode) -> Result<Trajectory> {
    let mut run = EpisodeRun::new(agent, ps, episode);
    while !run.done() {
        let (out, _) = run.policy()?;
        let action = act_greedy(&out.dist);
        run.advance(action);
    }
    Ok(run.trajectory)
}

/// Stored observations of one (possibly truncated) episode for the
/// teacher-forced update pass.
pub struct EpisodeRecordView<'a> {
    pub task: TaskKind,
    pub target: &'a TargetSpec,
    pub panoramas: &'a [Panorama],
    pub actions: &'a [usize],
}

/// Differentiable per-epoch outputs of the batched forward.
pub struct EpisodeForward<'t> {
    /// log pi(a_t | o_{1:t}, g) for the stored actions.
    pub log_probs: Vec<Tensor<'t>>,
    pub values: Vec<Tensor<'t>>,
    pub entropies: Vec<Tensor<'t>>,
}

/// Teacher-forced forward over a whole episode on one tape. Epoch t's
/// outputs depend only on observations 1..=t and actions before t, so this
/// reproduces the rollout-time computation for every step at once.
pub fn episode_forward<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    agent: &AgentParams,
    rec: &EpisodeRecordView<'_>,
) -> Result<EpisodeForward<'t>> {
    let t_len = rec.panoramas.len();
    assert!(t_len >= 1 && rec.actions.len() == t_len);
    let mask = agent.config.modality_mask;

    let feats: Vec<ModalFeatures<'t>> = rec
        .panoramas
        .iter()
        .map(|p| encode_modalities(tape, ps, &agent.encoder, p, mask))
        .collect::<std::result::Result<_, _>>()?;

    // Static targets build once; audio targets rebuild per epoch.
    let static_target = if rec.task == TaskKind::AudioGoal {
        None
    } else {
        Some(build_target_state(tape, ps, agent, rec.target, None)?)
    };
    let mut targets: Vec<TargetState<'t>> = Vec::with_capacity(t_len);
    for f in feats.iter() {
        targets.push(match &static_target {
            Some(t) => TargetState {
                augmented: t.augmented,
                pooled: t.pooled,
            },
            None => build_target_state(tape, ps, agent, rec.target, Some(f.audio))?,
        });
    }

    let mut tokens = Vec::with_capacity(t_len);
    for (i, f) in feats.iter().enumerate() {
        let fused = target_guided_fuse(tape, ps, &agent.encoder, targets[i].pooled, f)?;
        let o_t = msi(tape, ps, &agent.encoder, fused)?;
        let prev = if i == 0 { None } else { Some(rec.actions[i - 1]) };
        let a_prev = prev_action_embed(tape, ps, &agent.encoder, prev)?;
        tokens.push(make_token(tape, ps, &agent.encoder, o_t, a_prev)?);
    }
    let history = encode_history(tape, ps, &agent.encoder, &tokens)?;

    let mut out = EpisodeForward {
        log_probs: Vec::with_capacity(t_len),
        values: Vec::with_capacity(t_len),
        entropies: Vec::with_capacity(t_len),
    };
    for i in 0..t_len {
        let prefix = history.slice_rows(0, i + 1)?;
        let pooled_hist = prefix.mean_axis0()?;
        let queries = parse_goals(tape, ps, &agent.goals, pooled_hist, targets[i].augmented)?;
        let context = plan(tape, ps, &agent.planner, queries.queries, prefix, rec.task)?;
        let scores = action_head(tape, ps, &agent.planner, context, &feats[i], rec.task)?;
        let logp = scores.logits.log_softmax(0)?;
        out.log_probs.push(logp.at(rec.actions[i])?);
        // Entropy = -sum p log p.
        let p = scores.logits.softmax(0)?;
        out.entropies.push(p.mul(logp)?.sum().neg());
        out.values.push(scores.value);
    }
    Ok(out)
}

/// Scalar parameter count of a model instantiated with this configuration.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let (_, ps) = AgentParams::init(config.clone(), 0);
    ps.scalar_count()
}
