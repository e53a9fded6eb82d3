//! End-to-end orchestration: configuration, stage functions and the on-disk
//! run directory.

mod config;
pub mod disk;
pub mod stages;

pub use config::{DataConfig, EvalConfig, RunConfig, STRATEGIES};
pub use disk::{Manifest, Run, RunLog, StageEntry, SWEEP_RATIOS};
pub use stages::{run_in_memory, RunOutput, StrategyPolicy};

#[cfg(test)]
mod tests;
