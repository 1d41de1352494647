//! Shared fixtures for unit and integration tests.

use crate::agent::{AgentParams, ModelConfig};
use crate::tasks::{EpisodeSampler, SamplerConfig, SplitId, Splits, TaskKind};
use crate::tensor::ParamSet;
use crate::world::WorldParams;

/// Tiny model for fast tests (d = 8).
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        heads: 2,
        parse_heads: 2,
        n_i: 2,
        ..ModelConfig::desk()
    }
}

pub fn tiny_agent(seed: u64) -> (AgentParams, ParamSet) {
    AgentParams::init(tiny_config(), seed)
}

pub fn small_world_params() -> WorldParams {
    WorldParams {
        rooms_x: 1,
        rooms_y: 1,
        obstacles: 1,
        objects: 6,
        width_m: 8.0,
        height_m: 6.0,
        ..WorldParams::default()
    }
}

pub fn test_sampler(seed: u64) -> EpisodeSampler {
    EpisodeSampler::new(
        seed,
        Splits::desk(500, small_world_params()),
        SamplerConfig {
            min_goal_dist: 1.0,
            max_goal_dist: 4.0,
            max_epochs: 40,
            max_instruction_tokens: 24,
        },
    )
}

pub fn sample_episode(seed: u64, kind: TaskKind) -> crate::tasks::Episode {
    test_sampler(seed).sample(SplitId::Train, kind).unwrap()
}
