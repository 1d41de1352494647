//! Multitask embodied navigation at desk scale.
//!
//! This crate bundles everything needed to train and evaluate a single
//! agent on four navigation task kinds (image-goal, audio-goal,
//! object-goal, and instruction-following) inside procedurally generated
//! audiovisual 2D worlds:
//!
//! - [`tensor`]: float64 tensors, a reverse-mode gradient tape, and an
//!   AdamW optimizer;
//! - [`nn`]: attention, transformer blocks, masks, pooling, and sinusoidal
//!   position codes;
//! - [`world`]: occupancy-grid worlds, panoramic rendering with binaural
//!   audio, agent kinematics, and geodesic distance fields;
//! - [`tasks`]: episode sampling, instruction generation, data splits, and
//!   the success criterion;
//! - [`encoder`], [`goals`], [`planner`], [`agent`]: the parse-and-query
//!   policy — multisensory fusion, target parsing into goal queries, and a
//!   shared-trunk decoder with per-task heads;
//! - [`reward`]: the four-term shaped reward and the SR/NE/OR/SPL metrics;
//! - [`trainer`]: synchronous distributed multitask PPO with gradient
//!   averaging over client workers;
//! - [`config`]: experiment configuration, presets, and run manifests.
//!
//! The `book/` directory of the repository walks through each of these
//! pieces with runnable examples.

pub mod agent;
pub mod encoder;
pub mod goals;
pub mod nn;
pub mod planner;
pub mod tasks;
pub mod tensor;
pub mod world;
