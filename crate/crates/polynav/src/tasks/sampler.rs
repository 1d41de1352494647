//! Episode sampling over seen/unseen world splits.
//!
//! Each rollout worker owns its own sampler (independently seeded rng and
//! world cache); nothing here is shared mutable state.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::instruction::generate_instruction;
use super::{Episode, Result, TargetSpec, TaskError, TaskKind, MAX_EPOCHS};
use crate::world::{
    generate_world, render_panorama, AgentPose, DistanceField, SoundSource, World, WorldParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitId {
    Train,
    ValSeen,
    ValUnseen,
}

impl SplitId {
    pub fn name(self) -> &'static str {
        match self {
            SplitId::Train => "train",
            SplitId::ValSeen => "val_seen",
            SplitId::ValUnseen => "val_unseen",
        }
    }
}

/// World pools per split. Validation-seen episodes reuse the training
/// worlds; the unseen pool is disjoint by construction.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Splits {
    pub train_seeds: Vec<u64>,
    pub unseen_seeds: Vec<u64>,
    pub params: WorldParams,
}

impl Splits {
    /// Desk-scale splits: 24 training worlds and 8 unseen worlds.
    pub fn desk(base_seed: u64, params: WorldParams) -> Self {
        Splits {
            train_seeds: (0..24).map(|i| base_seed + i).collect(),
            unseen_seeds: (0..8).map(|i| base_seed + 10_000 + i).collect(),
            params,
        }
    }

    pub fn seeds(&self, split: SplitId) -> &[u64] {
        match split {
            SplitId::Train | SplitId::ValSeen => &self.train_seeds,
            SplitId::ValUnseen => &self.unseen_seeds,
        }
    }
}

/// Per-worker cache of generated worlds.
#[derive(Debug, Default)]
pub struct WorldPool {
    cache: HashMap<u64, Arc<World>>,
}

impl WorldPool {
    pub fn new() -> Self {
        WorldPool::default()
    }

    pub fn get(&mut self, seed: u64, params: &WorldParams) -> Result<Arc<World>> {
        if let Some(w) = self.cache.get(&seed) {
            return Ok(Arc::clone(w));
        }
        let w = Arc::new(generate_world(seed, params)?);
        self.cache.insert(seed, Arc::clone(&w));
        Ok(w)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    /// Episodes are nontrivial: goal at least this far (>= 1 m).
    pub min_goal_dist: f64,
    pub max_goal_dist: f64,
    /// Horizon for sampled episodes (can be below the global 500 cap).
    pub max_epochs: usize,
    /// Instruction token budget.
    pub max_instruction_tokens: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            min_goal_dist: 1.0,
            max_goal_dist: 6.0,
            max_epochs: MAX_EPOCHS,
            max_instruction_tokens: 24,
        }
    }
}

/// Draws episodes for one worker from independently seeded streams.
pub struct EpisodeSampler {
    rng: ChaCha8Rng,
    pool: WorldPool,
    pub splits: Splits,
    pub config: SamplerConfig,
    counter: u64,
}

const PLACE_TRIES: usize = 256;
const EPISODE_TRIES: usize = 64;

impl EpisodeSampler {
    pub fn new(seed: u64, splits: Splits, config: SamplerConfig) -> Self {
        EpisodeSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            pool: WorldPool::new(),
            splits,
            config,
            counter: 0,
        }
    }

    /// Sample one episode of the given kind from a split's world pool.
    pub fn sample(&mut self, split: SplitId, kind: TaskKind) -> Result<Episode> {
        let mut last_err = TaskError::SamplingExhausted {
            tries: EPISODE_TRIES,
        };
        for _ in 0..EPISODE_TRIES {
            match self.try_sample(split, kind) {
                Ok(ep) => return Ok(ep),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    fn try_sample(&mut self, split: SplitId, kind: TaskKind) -> Result<Episode> {
        let seeds = self.splits.seeds(split);
        if seeds.is_empty() {
            return Err(TaskError::EmptySplit);
        }
        let world_seed = seeds[self.rng.random_range(0..seeds.len())];
        let params = self.splits.params.clone();
        let base = self.pool.get(world_seed, &params)?;

        let start = self.sample_free_pose(&base)?;
        let (goal, class_tag) = match kind {
            TaskKind::ObjectGoal => {
                let cat = self.rng.random_range(0..params.categories);
                let field = DistanceField::from_point(&base, start.x, start.y)?;
                let inst = base
                    .objects
                    .iter()
                    .filter(|o| o.category == cat)
                    .filter_map(|o| {
                        let d = field.to_point(&base, o.x, o.y).ok()?;
                        (d >= self.config.min_goal_dist && d <= self.config.max_goal_dist)
                            .then_some((d, o))
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .ok_or(TaskError::NoCategoryInstance(cat))?;
                ((inst.1.x, inst.1.y), Some(cat))
            }
            _ => (self.sample_goal(&base, &start)?, None),
        };

        let audio_seed = self.rng.random();
        let world: Arc<World> = if kind == TaskKind::AudioGoal {
            // The audio target is a live source placed exactly at the goal.
            let nearest_cat = base
                .objects
                .iter()
                .min_by(|a, b| {
                    let da = (a.x - goal.0).hypot(a.y - goal.1);
                    let db = (b.x - goal.0).hypot(b.y - goal.1);
                    da.total_cmp(&db)
                })
                .map(|o| o.category)
                .unwrap_or(0);
            Arc::new(base.with_source(SoundSource {
                x: goal.0,
                y: goal.1,
                waveform_seed: audio_seed,
                category: nearest_cat,
            })?)
        } else {
            base
        };

        let goal_field = Arc::new(DistanceField::from_point(&world, goal.0, goal.1)?);
        let target = match kind {
            TaskKind::ImageGoal => {
                let pano = render_panorama(&world, &AgentPose::at(goal.0, goal.1))?;
                TargetSpec::GoalView(pano.rgb)
            }
            TaskKind::AudioGoal => TargetSpec::TargetSound,
            TaskKind::ObjectGoal => TargetSpec::ClassTag(class_tag.unwrap()),
            TaskKind::VisionLanguage => {
                let path = goal_field.descend_path(&world, start.x, start.y)?;
                TargetSpec::Instruction(generate_instruction(
                    &world,
                    &path,
                    self.config.max_instruction_tokens,
                )?)
            }
        };

        self.counter += 1;
        Ok(Episode {
            id: format!("{}-{}-{:06}", split.name(), kind.name(), self.counter),
            world,
            world_seed,
            audio_seed,
            start,
            goal,
            target,
            task: kind,
            max_epochs: self.config.max_epochs,
            goal_field,
        })
    }

    fn sample_free_pose(&mut self, world: &World) -> Result<AgentPose> {
        for _ in 0..PLACE_TRIES {
            let x = self.rng.random_range(0.0..world.params.width_m);
            let y = self.rng.random_range(0.0..world.params.height_m);
            if crate::world::clearance_free(&world.grid, x, y, 0.15) {
                return Ok(AgentPose::at(x, y));
            }
        }
        Err(TaskError::SamplingExhausted { tries: PLACE_TRIES })
    }

    fn sample_goal(&mut self, world: &World, start: &AgentPose) -> Result<(f64, f64)> {
        let field = DistanceField::from_point(world, start.x, start.y)?;
        for _ in 0..PLACE_TRIES {
            let x = self.rng.random_range(0.0..world.params.width_m);
            let y = self.rng.random_range(0.0..world.params.height_m);
            if !crate::world::clearance_free(&world.grid, x, y, 0.15) {
                continue;
            }
            if let Ok(d) = field.to_point(world, x, y) {
                if d >= self.config.min_goal_dist && d <= self.config.max_goal_dist {
                    return Ok((x, y));
                }
            }
        }
        Err(TaskError::SamplingExhausted { tries: PLACE_TRIES })
    }
}
