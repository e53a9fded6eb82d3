use serde::{Deserialize, Serialize};

use super::config::{Geometry, MaterialParams, SimConfig};
use super::expert::Policy;
use super::sim::{Sim, N_A, N_S};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::trajdata::{DomainTag, Trajectory};

/// Per-episode record written next to each trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub id: String,
    pub policy: String,
    pub seed: u64,
    /// s
    pub completion_time: f64,
    pub fault: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_reason: Option<String>,
    pub material: MaterialParams,
    pub geometry: Geometry,
    /// m
    pub path_length: f64,
    /// mm
    pub width: f64,
    /// s between samples.
    pub dt: f64,
    /// Tool depth below the true surface at each sample, mm.
    pub engaged_doc: Vec<f64>,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub meta: EpisodeMeta,
}

/// Rows `t + 1 − n ..= t` of `rows`, zero-padded at the front.
fn recent_window(rows: &[[f64; N_S]], n: usize) -> Matrix {
    let mut w = Matrix::zeros(n, N_S);
    let take = rows.len().min(n);
    for (i, r) in rows[rows.len() - take..].iter().enumerate() {
        w.row_mut(n - take + i).copy_from_slice(r);
    }
    w
}

/// Roll out `policy` until the reference reaches the end of the path or the
/// simulation faults. One row is recorded per observation instant, the last
/// one at the instant the path was completed.
pub fn run_episode(
    config: &SimConfig,
    policy: &mut dyn Policy,
    noise: Rng,
    id: &str,
    domain: DomainTag,
    seed: u64,
) -> Result<Episode> {
    let mut sim = Sim::new(config, noise)?;
    let n = policy.window();
    if n == 0 {
        return Err(Error::Invalid(format!("policy '{}' has window size 0", policy.name())));
    }
    let mut rows: Vec<[f64; N_S]> = Vec::new();
    let mut actions: Vec<[f64; N_A]> = Vec::new();
    let mut engaged = Vec::new();
    if config.path_length > 0.0 {
        let v_min = 0.5 * config.nominal_feed / 60.0;
        let max_obs = (config.path_length / v_min / config.obs_dt).ceil() as usize + 2;
        loop {
            rows.push(sim.observe());
            let w = recent_window(&rows, n);
            let a = policy.act(&w)?;
            sim.apply_action(&a);
            actions.push(sim.action.to_vec());
            engaged.push(sim.engaged_doc());
            if sim.done() {
                break;
            }
            if rows.len() > max_obs {
                sim.fault = Some("episode exceeded its step budget".into());
                break;
            }
            sim.advance_observation()?;
        }
    }
    let t = rows.len();
    let states = Matrix::from_vec(t, N_S, rows.concat())?;
    let acts = Matrix::from_vec(t, N_A, actions.concat())?;
    let trajectory = Trajectory::new(id, config.obs_dt, states, acts, domain)?;
    if let Some(reason) = &sim.fault {
        log::warn!("episode {id} faulted: {reason}");
    }
    let meta = EpisodeMeta {
        id: id.to_string(),
        policy: policy.name().to_string(),
        seed,
        completion_time: sim.completion_time.unwrap_or(sim.time),
        fault: sim.fault.is_some(),
        fault_reason: sim.fault.clone(),
        material: sim.material.clone(),
        geometry: config.geometry.clone(),
        path_length: config.path_length,
        width: sim.cutter.width * 1e3,
        dt: config.obs_dt,
        engaged_doc: engaged,
        clamp_events: sim.clamp_events,
    };
    Ok(Episode { trajectory, meta })
}
