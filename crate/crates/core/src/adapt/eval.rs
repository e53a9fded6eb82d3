//! Simulator rollouts of a policy, scored with the episode metrics.

use crate::cutsim::{run_episode, Episode, EpisodeRngs, Perturbation, Policy, SimConfig, N_A};
use crate::error::Result;
use crate::evalstat::{episode_metrics, MetricsConfig, MetricsRow};
use crate::matrix::Matrix;
use crate::par::{self, Exec};
use crate::rng::stream;
use crate::trajdata::DomainTag;

/// What every evaluated episode is scored against.
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    /// Expert action series in action units.
    pub references: Vec<Matrix>,
    pub bounds: Vec<(f64, f64)>,
    pub metrics: MetricsConfig,
}

impl EvalContext {
    pub fn new(references: Vec<Matrix>, bounds: [(f64, f64); N_A], metrics: MetricsConfig) -> Self {
        EvalContext {
            references,
            bounds: bounds.to_vec(),
            metrics,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub row: MetricsRow,
    pub episode: Episode,
}

/// Roll out `policy` once per seed index. Episode `i` draws its sensor noise
/// from `(master, EVALUATION, indices[i])`. Simulator faults are flagged in
/// the returned rows.
pub fn evaluate_indices<P: Policy + Clone + Sync>(
    policy: &P,
    strategy: &str,
    cfg: &SimConfig,
    master: u64,
    indices: &[u64],
    ctx: &EvalContext,
    exec: Exec,
) -> Result<Vec<EvalEpisode>> {
    let domain = if cfg.perturbation == Perturbation::none() { DomainTag::Source } else { DomainTag::Target };
    let out = par::map(exec, indices, |_, &index| -> Result<EvalEpisode> {
        let rngs = EpisodeRngs::new(master, stream::EVALUATION, index);
        let mut p = policy.clone();
        let id = format!("{strategy}-{}-{}-{index:05}", cfg.material.name, cfg.geometry.name());
        let episode = run_episode(cfg, &mut p, rngs.noise, &id, domain, rngs.seed)?;
        let m = episode_metrics(&episode, &ctx.references, &ctx.bounds, &ctx.metrics)?;
        let row = MetricsRow {
            strategy: strategy.to_string(),
            material: cfg.material.name.clone(),
            geometry: cfg.geometry.name().to_string(),
            completion_time: m.completion_time,
            path_dev: m.avg_path_deviation,
            avg_force: m.avg_force,
            mrv: m.mrv,
            dtw: m.dtw_to_expert,
            seed: rngs.seed,
            fault: episode.meta.fault,
            no_contact: m.no_contact,
        };
        Ok(EvalEpisode { row, episode })
    });
    out.into_iter().collect()
}

/// `n_episodes` rollouts with seed indices `0..n_episodes`.
pub fn evaluate_policy<P: Policy + Clone + Sync>(
    policy: &P,
    strategy: &str,
    cfg: &SimConfig,
    n_episodes: usize,
    seed: u64,
    ctx: &EvalContext,
    exec: Exec,
) -> Result<Vec<MetricsRow>> {
    let idx: Vec<u64> = (0..n_episodes as u64).collect();
    Ok(evaluate_indices(policy, strategy, cfg, seed, &idx, ctx, exec)?
        .into_iter()
        .map(|e| e.row)
        .collect())
}
