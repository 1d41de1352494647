//! The four navigation task kinds, episode sampling, data splits, template
//! instructions, and the success criterion.

mod instruction;
mod sampler;
#[cfg(test)]
mod tests;
mod vocab;

pub use instruction::{generate_instruction, parse_turns, path_turns, simplify_path, TurnDir};
pub use sampler::{EpisodeSampler, SamplerConfig, SplitId, Splits, WorldPool};
pub use vocab::{token_id, token_name, Vocabulary, CATEGORY_NAMES, VOCAB_SIZE};

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::world::{AgentPose, DistanceField, Mat, World, WorldError, STOP_ACTION};

/// Episode horizon: an episode must finish within this many actions.
pub const MAX_EPOCHS: usize = 500;
/// An episode succeeds when the agent stops within this geodesic radius of
/// the goal (also the oracle-rate radius).
pub const SUCCESS_RADIUS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("no instance of category {0} in world (resample)")]
    NoCategoryInstance(usize),
    #[error("could not sample a start/goal pair within {tries} tries")]
    SamplingExhausted { tries: usize },
    #[error("instruction of {len} tokens exceeds the {max} token limit")]
    InstructionTooLong { len: usize, max: usize },
    #[error("waypoint ({0:.2}, {1:.2}) lies outside free space")]
    PathOutsideWorld(f64, f64),
    #[error("split has no worlds")]
    EmptySplit,
}

pub type Result<T> = std::result::Result<T, TaskError>;

/// The four task kinds an agent must master concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ImageGoal,
    AudioGoal,
    ObjectGoal,
    VisionLanguage,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::ImageGoal,
        TaskKind::AudioGoal,
        TaskKind::ObjectGoal,
        TaskKind::VisionLanguage,
    ];

    pub fn index(self) -> usize {
        match self {
            TaskKind::ImageGoal => 0,
            TaskKind::AudioGoal => 1,
            TaskKind::ObjectGoal => 2,
            TaskKind::VisionLanguage => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ImageGoal => "image_goal",
            TaskKind::AudioGoal => "audio_goal",
            TaskKind::ObjectGoal => "object_goal",
            TaskKind::VisionLanguage => "vision_language",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A templated trajectory instruction. The waypoint path used to generate
/// it is retained for tooling but hidden from the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub tokens: Vec<u16>,
    pub source_path: Vec<(f64, f64)>,
}

impl Instruction {
    pub fn words(&self) -> Vec<&'static str> {
        self.tokens.iter().map(|&t| token_name(t)).collect()
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }
}

/// What the agent is told about the goal; exactly one variant per episode.
#[derive(Debug, Clone)]
pub enum TargetSpec {
    /// Image goal: visual features of the panorama rendered at the goal.
    GoalView(Mat),
    /// Audio goal: the target is the live binaural stream from a source
    /// placed at the goal (no static payload).
    TargetSound,
    /// Object goal: a semantic category tag.
    ClassTag(usize),
    /// Instruction-following goal.
    Instruction(Instruction),
}

impl TargetSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TargetSpec::GoalView(_) => TaskKind::ImageGoal,
            TargetSpec::TargetSound => TaskKind::AudioGoal,
            TargetSpec::ClassTag(_) => TaskKind::ObjectGoal,
            TargetSpec::Instruction(_) => TaskKind::VisionLanguage,
        }
    }
}

/// One navigation problem instance. The world already contains the goal
/// sound source for audio episodes; `goal_field` is the precomputed
/// geodesic distance-to-goal field shared by rewards, success checks, and
/// the oracle agent.
#[derive(Debug, Clone)]
pub struct Episode {
    pub id: String,
    pub world: Arc<World>,
    pub world_seed: u64,
    pub audio_seed: u64,
    pub start: AgentPose,
    pub goal: (f64, f64),
    pub target: TargetSpec,
    pub task: TaskKind,
    pub max_epochs: usize,
    pub goal_field: Arc<DistanceField>,
}

impl Episode {
    /// Geodesic distance from a pose to the goal.
    pub fn dist_to_goal(&self, pose: &AgentPose) -> Result<f64> {
        Ok(self.goal_field.to_point(&self.world, pose.x, pose.y)?)
    }
}

/// A completed (or truncated) walk through an episode.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    /// Visited poses; `poses[0]` is the start, one more entry per action.
    pub poses: Vec<AgentPose>,
    pub actions: Vec<usize>,
    pub collisions: Vec<bool>,
}

impl Trajectory {
    pub fn start(pose: AgentPose) -> Self {
        Trajectory {
            poses: vec![pose],
            actions: Vec::new(),
            collisions: Vec::new(),
        }
    }

    pub fn push(&mut self, action: usize, pose: AgentPose, collided: bool) {
        self.actions.push(action);
        self.poses.push(pose);
        self.collisions.push(collided);
    }

    pub fn epochs(&self) -> usize {
        self.actions.len()
    }

    pub fn final_pose(&self) -> AgentPose {
        *self.poses.last().expect("trajectory has a start pose")
    }

    /// Euclidean length actually walked.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[0].x - w[1].x).hypot(w[0].y - w[1].y))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

/// Success requires all three of: the final action is stop, the stop
/// position is within [`SUCCESS_RADIUS`] of the goal geodesically, and the
/// episode used at most [`MAX_EPOCHS`] actions.
pub fn check_success(episode: &Episode, trajectory: &Trajectory) -> Result<Outcome> {
    assert!(!trajectory.actions.is_empty(), "trajectory is empty");
    let stopped = *trajectory.actions.last().unwrap() == STOP_ACTION;
    let within_horizon = trajectory.epochs() <= MAX_EPOCHS;
    let fin = trajectory.final_pose();
    let close = episode.dist_to_goal(&fin)? < SUCCESS_RADIUS;
    Ok(if stopped && close && within_horizon {
        Outcome::Success
    } else {
        Outcome::Failure
    })
}

/// Scripted shortest-path agent: walks down the goal distance field and
/// stops inside the success radius. Used to validate episode solvability
/// and as an evaluation upper bound.
pub fn oracle_action(episode: &Episode, pose: &AgentPose) -> Result<usize> {
    if episode.dist_to_goal(pose)? < SUCCESS_RADIUS {
        return Ok(STOP_ACTION);
    }
    let mut best = (f64::INFINITY, STOP_ACTION);
    for action in 0..STOP_ACTION {
        let out = crate::world::step(&episode.world, pose, action);
        let d = episode.dist_to_goal(&out.pose)?;
        if d < best.0 {
            best = (d, action);
        }
    }
    Ok(best.1)
}

/// Run the oracle agent to completion (stop or horizon).
pub fn run_oracle(episode: &Episode) -> Result<Trajectory> {
    let mut traj = Trajectory::start(episode.start);
    let mut pose = episode.start;
    for _ in 0..episode.max_epochs {
        let action = oracle_action(episode, &pose)?;
        let out = crate::world::step(&episode.world, &pose, action);
        traj.push(action, out.pose, out.collided);
        pose = out.pose;
        if action == STOP_ACTION {
            break;
        }
    }
    Ok(traj)
}

/// One line of the episode log (JSON-lines schema).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLogRecord {
    pub episode_id: String,
    pub task: TaskKind,
    pub world_seed: u64,
    pub start: (f64, f64),
    pub goal: (f64, f64),
    pub outcome: Outcome,
    pub path_length: f64,
    pub epochs: usize,
}

impl EpisodeLogRecord {
    pub fn new(episode: &Episode, trajectory: &Trajectory, outcome: Outcome) -> Self {
        EpisodeLogRecord {
            episode_id: episode.id.clone(),
            task: episode.task,
            world_seed: episode.world_seed,
            start: (episode.start.x, episode.start.y),
            goal: episode.goal,
            outcome,
            path_length: trajectory.path_length(),
            epochs: trajectory.epochs(),
        }
    }
}
