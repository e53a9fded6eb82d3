//! Cutting simulator: mechanistic milling forces, a point-mass impedance
//! model of the robot, sensor effects for the surrogate target domain, a
//! scripted expert and dataset generation.

mod config;
mod datagen;
mod episode;
mod expert;
mod force;
mod gravity;
mod sim;

pub use config::{CutterModel, Geometry, ImpedanceConfig, MaterialParams, Perturbation, SimConfig};
pub use datagen::{
    generate_content, generate_grid, generate_source, generate_target, GridSpec, load_meta, randomise_geometry, randomise_material, save_episodes, Behaviour,
    EpisodeRngs,
};
pub use episode::{run_episode, Episode, EpisodeMeta};
pub use expert::{ConstantPolicy, NoisyPolicy, Policy, RandomHoldPolicy, ScriptedExpert};
pub use force::{cutting_force, entry_angle, feed_per_tooth, norm, revolution_average, tooth_force, Force3};
pub use gravity::{gravity_compensate, Mat3, Vec3};
pub use sim::{
    action_bounds, clamp_action, critically_damped_error, obs, Action, ImpedanceState, LagFilter, Sim,
    DOC_OFFSET_RANGE, FEED_ADJUST_RANGE, N_A, N_S,
};

#[cfg(test)]
mod tests;
