//! Pipeline stages as functions of their inputs. The on-disk runner and the
//! acceptance suite both go through these.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::adapt::{
    action_to_units, clone_expert_policy, distill_expert, evaluate_indices, train_bc, BcEpoch, DistillReport, EvalContext,
    PolicyNet,
};
use crate::cutsim::{
    generate_content, generate_source, generate_target, run_episode, Action, ConstantPolicy, Episode, Policy, ScriptedExpert,
    SimConfig, N_A,
};
use crate::error::{Error, Result};
use crate::evalstat::{to_action_units, MetricsRow};
use crate::matrix::Matrix;
use crate::pairing::{embed_dataset, match_sets, PairingResult};
use crate::par::{self, Exec};
use crate::rng::{stream, Rng};
use crate::styletx::{build_adapted_dataset, expert_labels, AdaptedDataset, TransferConfig};
use crate::trajdata::{make_windows_bulk, DomainTag, NormStats, Trajectory, Window};
use crate::vae::{train_vae, EpochLoss, Vae};

use rand::SeedableRng;

pub fn simulate_source(cfg: &RunConfig, exec: Exec) -> Result<Vec<Episode>> {
    generate_source(&cfg.source, cfg.data.source_count, cfg.vae.window, cfg.seed, stream::SOURCE_EPISODES, exec)
}

pub fn simulate_target(cfg: &RunConfig, exec: Exec) -> Result<Vec<Episode>> {
    generate_target(
        &cfg.target_sim(),
        &cfg.materials,
        &cfg.geometries,
        cfg.data.target_count,
        cfg.vae.window,
        cfg.seed,
        stream::TARGET_EPISODES,
        exec,
    )
}

pub fn simulate_content(cfg: &RunConfig, exec: Exec) -> Result<Vec<Episode>> {
    generate_content(
        &cfg.source,
        &cfg.materials,
        &cfg.geometries,
        cfg.data.content_count,
        cfg.vae.window,
        cfg.seed,
        stream::CONTENT_EPISODES,
        exec,
    )
}

pub fn trajectories(episodes: &[Episode]) -> Vec<Trajectory> {
    episodes.iter().map(|e| e.trajectory.clone()).collect()
}

/// Statistics of the source states; every domain is normalised with them.
pub fn source_norm(source: &[Trajectory]) -> Result<NormStats> {
    NormStats::compute(source.iter().map(|t| &t.states))
}

/// Normalised windows of every trajectory at `stride`.
pub fn normalised_windows(trajs: &[Trajectory], norm: &NormStats, n: usize, stride: usize, exec: Exec) -> Result<Vec<Window>> {
    let mut w = make_windows_bulk(trajs, n, stride, exec)?;
    for x in &mut w {
        norm.apply(&mut x.data);
    }
    Ok(w)
}

pub fn train_vae_stage(cfg: &RunConfig, source: &[Trajectory], norm: &NormStats, exec: Exec) -> Result<(Vae, Vec<EpochLoss>)> {
    let windows = normalised_windows(source, norm, cfg.vae.window, cfg.data.vae_stride, exec)?;
    if windows.is_empty() {
        return Err(Error::Invalid(format!(
            "no source trajectory is at least {} samples long",
            cfg.vae.window
        )));
    }
    let data: Vec<Matrix> = windows.into_iter().map(|w| w.data).collect();
    let mut vae = Vae::new(cfg.vae.clone(), cfg.seed)?;
    let mut tc = cfg.vae_train.clone();
    tc.seed = cfg.seed;
    let hist = train_vae(&mut vae, &data, &tc)?;
    Ok((vae, hist))
}

/// Content windows, style windows and their latent pairing.
pub struct Paired {
    pub contents: Vec<Window>,
    pub styles: Vec<Window>,
    pub pairing: PairingResult,
}

pub fn pair_stage(cfg: &RunConfig, content: &[Trajectory], target: &[Trajectory], norm: &NormStats, vae: &Vae, exec: Exec) -> Result<Paired> {
    let n = cfg.vae.window;
    let contents = normalised_windows(content, norm, n, cfg.data.content_stride, exec)?;
    let styles = normalised_windows(target, norm, n, cfg.data.style_stride, exec)?;
    let c = embed_dataset(&contents, vae, DomainTag::Source, exec)?;
    let s = embed_dataset(&styles, vae, DomainTag::Target, exec)?;
    let pairing = match_sets(&c, &s, exec)?;
    Ok(Paired { contents, styles, pairing })
}

pub fn transfer_stage(
    paired: &Paired,
    content: &[Trajectory],
    vae: &Vae,
    tcfg: &TransferConfig,
    exec: Exec,
) -> Result<AdaptedDataset> {
    let labels = expert_labels(&paired.contents, content)?;
    build_adapted_dataset(&paired.pairing, &paired.contents, &labels, &paired.styles, vae, tcfg, exec)
}

pub fn scripted_expert(cfg: &RunConfig) -> ScriptedExpert {
    ScriptedExpert::for_config(&cfg.source, cfg.policy.window)
}

pub fn distill_stage(cfg: &RunConfig, source: &[Trajectory], norm: &NormStats) -> Result<(PolicyNet, DistillReport)> {
    let mut bc = cfg.distill.clone();
    bc.seed = cfg.seed;
    distill_expert(&scripted_expert(cfg), source, cfg.policy.clone(), norm.clone(), &bc, cfg.distill_stride)
}

/// Clone the expert net and fine-tune it on an adapted dataset.
pub fn adapt_stage(cfg: &RunConfig, expert: &PolicyNet, data: &AdaptedDataset, name: &str) -> Result<(PolicyNet, Vec<BcEpoch>)> {
    let bounds = cfg.policy.bounds();
    let mut labels = Vec::with_capacity(data.len() * N_A);
    for r in &data.records {
        labels.extend(action_to_units(&Action::from_slice(&r.label), &bounds));
    }
    let labels = Matrix::from_vec(data.len(), N_A, labels)?;
    let mut policy = clone_expert_policy(expert, name);
    let mut bc = cfg.bc.clone();
    bc.seed = cfg.seed;
    let hist = train_bc(&mut policy, &data.windows, &labels, &bc)?;
    Ok((policy, hist))
}

/// A policy under evaluation.
#[derive(Debug, Clone)]
pub enum StrategyPolicy {
    Net(PolicyNet),
    Constant(ConstantPolicy),
}

impl Policy for StrategyPolicy {
    fn name(&self) -> &str {
        match self {
            StrategyPolicy::Net(p) => p.name(),
            StrategyPolicy::Constant(p) => p.name(),
        }
    }

    fn window(&self) -> usize {
        match self {
            StrategyPolicy::Net(p) => p.window(),
            StrategyPolicy::Constant(p) => p.window(),
        }
    }

    fn act(&mut self, window: &Matrix) -> Result<Action> {
        match self {
            StrategyPolicy::Net(p) => p.act(window),
            StrategyPolicy::Constant(p) => p.act(window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalJob {
    pub strategy: usize,
    pub geometry: usize,
    pub material: usize,
    pub episode: usize,
    pub seed_index: u64,
}

/// Episodes in run order. Strategies are interleaved within each episode
/// slot, and seed indices follow the run order, so no strategy owns a
/// contiguous block of seeds.
pub fn eval_schedule(cfg: &RunConfig, n_strategies: usize) -> Vec<EvalJob> {
    let mut jobs = Vec::new();
    let mut k = 0u64;
    for g in 0..cfg.geometries.len() {
        for e in 0..cfg.eval.episodes_per_geometry {
            for s in 0..n_strategies {
                jobs.push(EvalJob {
                    strategy: s,
                    geometry: g,
                    material: e % cfg.materials.len(),
                    episode: e,
                    seed_index: k,
                });
                k += 1;
            }
        }
    }
    jobs
}

fn cell_sim(base: &SimConfig, cfg: &RunConfig, material: usize, geometry: usize) -> SimConfig {
    SimConfig {
        material: cfg.materials[material].clone(),
        geometry: cfg.geometries[geometry].clone(),
        ..base.clone()
    }
}

/// Scripted-expert action series in the unperturbed simulator, in action
/// units, indexed `[geometry][material]`.
pub fn expert_references(cfg: &RunConfig, exec: Exec) -> Result<Vec<Vec<Matrix>>> {
    let cells: Vec<(usize, usize)> = (0..cfg.geometries.len())
        .flat_map(|g| (0..cfg.materials.len()).map(move |m| (g, m)))
        .collect();
    let bounds = cfg.policy.bounds();
    let refs = par::map(exec, &cells, |_, &(g, m)| -> Result<Matrix> {
        let sim = cell_sim(&cfg.source, cfg, m, g);
        let mut expert = scripted_expert(cfg);
        let ep = run_episode(&sim, &mut expert, Rng::seed_from_u64(0), "reference", DomainTag::Source, 0)?;
        to_action_units(&ep.trajectory.actions, &bounds)
    });
    let mut out = vec![Vec::new(); cfg.geometries.len()];
    for ((g, _), r) in cells.iter().zip(refs) {
        out[*g].push(r?);
    }
    Ok(out)
}

/// Evaluate every named policy in the target domain on the interleaved
/// schedule. Rows come back in schedule order.
pub fn evaluate_stage(cfg: &RunConfig, policies: &[(String, StrategyPolicy)], exec: Exec) -> Result<Vec<MetricsRow>> {
    let refs = expert_references(cfg, exec)?;
    let target = cfg.target_sim();
    let jobs = eval_schedule(cfg, policies.len());
    let rows = par::map(exec, &jobs, |_, job| -> Result<MetricsRow> {
        let (name, policy) = &policies[job.strategy];
        let sim = cell_sim(&target, cfg, job.material, job.geometry);
        let ctx = EvalContext::new(vec![refs[job.geometry][job.material].clone()], cfg.policy.bounds(), cfg.eval.metrics);
        let mut out = evaluate_indices(policy, name, &sim, cfg.seed, &[job.seed_index], &ctx, Exec::Sequential)?;
        Ok(out.remove(0).row)
    });
    rows.into_iter().collect()
}

/// Everything one end-to-end run produces in memory.
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub pairing: PairingResult,
    pub distill: DistillReport,
    pub vae_history: Vec<EpochLoss>,
    pub adapted_windows: usize,
    pub bc_history: Vec<(String, Vec<BcEpoch>)>,
    pub timings: Vec<(String, f64)>,
}

/// The whole pipeline in memory, for the strategies listed in the config.
pub fn run_in_memory(cfg: &RunConfig, exec: Exec) -> Result<RunOutput> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let mut clock = std::time::Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        let t = clock.elapsed().as_secs_f64();
        log::info!("{name}: {t:.1} s");
        timings.push((name.to_string(), t));
        clock = std::time::Instant::now();
    };
    let source = trajectories(&simulate_source(cfg, exec)?);
    let target = trajectories(&simulate_target(cfg, exec)?);
    let content = trajectories(&simulate_content(cfg, exec)?);
    lap("simulate", &mut timings);
    let norm = source_norm(&source)?;
    let (vae, vae_history) = train_vae_stage(cfg, &source, &norm, exec)?;
    lap("train-vae", &mut timings);
    let paired = pair_stage(cfg, &content, &target, &norm, &vae, exec)?;
    lap("pair", &mut timings);
    let (expert, distill) = distill_stage(cfg, &source, &norm)?;
    lap("distill", &mut timings);

    let mut policies: Vec<(String, StrategyPolicy)> = Vec::new();
    let mut bc_history = Vec::new();
    let mut adapted_windows = 0;
    for s in &cfg.eval.strategies {
        let p = match s.as_str() {
            "expert" => StrategyPolicy::Net(clone_expert_policy(&expert, "expert")),
            "baseline" => StrategyPolicy::Constant(ConstantPolicy::baseline(cfg.eval.baseline_stiffness, cfg.policy.window)),
            "bc-identity" | "style-transfer" => {
                let tcfg = if s == "bc-identity" { TransferConfig::identity() } else { cfg.transfer.clone() };
                let data = transfer_stage(&paired, &content, &vae, &tcfg, exec)?;
                adapted_windows = data.len();
                lap(&format!("transfer ({s})"), &mut timings);
                let (p, h) = adapt_stage(cfg, &expert, &data, s)?;
                bc_history.push((s.clone(), h));
                lap(&format!("adapt ({s})"), &mut timings);
                StrategyPolicy::Net(p)
            }
            other => return Err(Error::Config(format!("unknown strategy '{other}'"))),
        };
        policies.push((s.clone(), p));
    }
    let rows = evaluate_stage(cfg, &policies, exec)?;
    lap("evaluate", &mut timings);
    Ok(RunOutput {
        rows,
        pairing: paired.pairing,
        distill,
        vae_history,
        adapted_windows,
        bc_history,
        timings,
    })
}
