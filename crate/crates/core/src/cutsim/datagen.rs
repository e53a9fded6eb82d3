//! Source and surrogate-target dataset generation.

use std::path::Path;

use rand::Rng as _;
use rand::SeedableRng;

use super::config::{Geometry, MaterialParams, SimConfig};
use super::episode::{run_episode, Episode, EpisodeMeta};
use super::expert::{NoisyPolicy, Policy, RandomHoldPolicy, ScriptedExpert};
use super::sim::{N_A, N_S};
use crate::error::Result;
use crate::par::{self, Exec};
use crate::rng::{derive_seed, Rng};
use crate::trajdata::{save_dataset, Dataset, DomainTag};

/// Independent generators for one episode: material/geometry draws, the
/// policy, and sensor noise.
pub struct EpisodeRngs {
    pub seed: u64,
    pub setup: Rng,
    pub policy: Rng,
    pub noise: Rng,
}

impl EpisodeRngs {
    pub fn new(master: u64, stream: u64, index: u64) -> Self {
        let seed = derive_seed(master, stream, index);
        EpisodeRngs {
            seed,
            setup: Rng::seed_from_u64(derive_seed(seed, 1, 0)),
            policy: Rng::seed_from_u64(derive_seed(seed, 2, 0)),
            noise: Rng::seed_from_u64(derive_seed(seed, 3, 0)),
        }
    }
}

fn log_uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Draw K_c and K_e from the material's ranges, where given.
pub fn randomise_material(m: &MaterialParams, rng: &mut Rng) -> MaterialParams {
    let mut out = m.clone();
    if let Some(r) = m.k_c_range {
        out.k_c = log_uniform(rng, r);
    }
    if let Some(r) = m.k_e_range {
        out.k_e = log_uniform(rng, r);
    }
    out
}

/// Random geometry of the same three kinds as the evaluation set.
pub fn randomise_geometry(rng: &mut Rng) -> Geometry {
    match rng.gen_range(0..3) {
        0 => Geometry::Flat,
        1 => Geometry::Offset {
            depth: rng.gen_range(0.0..1.5),
        },
        _ => Geometry::Curved {
            amplitude: rng.gen_range(-1.5..1.5),
        },
    }
}

/// Which behaviour generated an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    Expert,
    NoisyExpert,
    RandomHold,
}

fn rollout(cfg: &SimConfig, behaviour: Behaviour, window: usize, rngs: EpisodeRngs, id: &str, domain: DomainTag) -> Result<Episode> {
    let EpisodeRngs { seed, policy: prng, noise, .. } = rngs;
    let imp = &cfg.impedance;
    let expert = ScriptedExpert::for_config(cfg, window);
    let mut policy: Box<dyn Policy> = match behaviour {
        Behaviour::Expert => Box::new(expert),
        Behaviour::NoisyExpert => Box::new(NoisyPolicy::new(expert, 0.08, 10, imp.k_min, imp.k_max, prng)),
        Behaviour::RandomHold => Box::new(RandomHoldPolicy::new(window, imp.k_min, imp.k_max, (10, 50), prng)),
    };
    run_episode(cfg, policy.as_mut(), noise, id, domain, seed)
}

/// Source-domain episodes: even indices follow the scripted expert, odd ones
/// hold random actions; material constants and geometry are randomised.
pub fn generate_source(base: &SimConfig, count: usize, window: usize, master: u64, stream: u64, exec: Exec) -> Result<Vec<Episode>> {
    let eps = par::map_range(exec, count, |i| {
        let mut rngs = EpisodeRngs::new(master, stream, i as u64);
        let mut cfg = base.clone();
        cfg.material = randomise_material(&base.material, &mut rngs.setup);
        cfg.geometry = randomise_geometry(&mut rngs.setup);
        let behaviour = if i % 2 == 0 { Behaviour::Expert } else { Behaviour::RandomHold };
        rollout(&cfg, behaviour, window, rngs, &format!("src-{i:04}"), DomainTag::Source)
    });
    eps.into_iter().collect()
}

/// Surrogate target-domain episodes over the given materials and geometries
/// (cycled), alternating a noisy expert and random holds.
#[allow(clippy::too_many_arguments)]
pub fn generate_target(
    base: &SimConfig,
    materials: &[MaterialParams],
    geometries: &[Geometry],
    count: usize,
    window: usize,
    master: u64,
    stream: u64,
    exec: Exec,
) -> Result<Vec<Episode>> {
    let spec = GridSpec {
        materials,
        geometries,
        domain: DomainTag::Target,
        prefix: "tgt",
        period: 2,
    };
    generate_grid(base, &spec, count, window, master, stream, exec, |i| {
        if i % 2 == 0 {
            Behaviour::NoisyExpert
        } else {
            Behaviour::RandomHold
        }
    })
}

/// Where grid episodes run and how they are named.
pub struct GridSpec<'a> {
    pub materials: &'a [MaterialParams],
    pub geometries: &'a [Geometry],
    pub domain: DomainTag,
    pub prefix: &'a str,
    /// Consecutive indices sharing a material.
    pub period: usize,
}

/// Episodes cycling through materials (every `period` indices) and
/// geometries (every `period · materials` indices).
#[allow(clippy::too_many_arguments)]
pub fn generate_grid(
    base: &SimConfig,
    spec: &GridSpec<'_>,
    count: usize,
    window: usize,
    master: u64,
    stream: u64,
    exec: Exec,
    behaviour: impl Fn(usize) -> Behaviour + Sync + Send,
) -> Result<Vec<Episode>> {
    let (materials, geometries) = (spec.materials, spec.geometries);
    let period = spec.period.max(1);
    let eps = par::map_range(exec, count, |i| {
        let rngs = EpisodeRngs::new(master, stream, i as u64);
        let mut cfg = base.clone();
        if !materials.is_empty() {
            cfg.material = materials[(i / period) % materials.len()].clone();
        }
        if !geometries.is_empty() {
            cfg.geometry = geometries[(i / (period * materials.len().max(1))) % geometries.len()].clone();
        }
        rollout(&cfg, behaviour(i), window, rngs, &format!("{}-{i:04}", spec.prefix), spec.domain)
    });
    eps.into_iter().collect()
}

/// Scripted-expert episodes in the unperturbed domain over a material and
/// geometry grid: the content set and the expert references.
#[allow(clippy::too_many_arguments)]
pub fn generate_content(
    base: &SimConfig,
    materials: &[MaterialParams],
    geometries: &[Geometry],
    count: usize,
    window: usize,
    master: u64,
    stream: u64,
    exec: Exec,
) -> Result<Vec<Episode>> {
    let mut cfg = base.clone();
    cfg.perturbation = super::config::Perturbation::none();
    let spec = GridSpec {
        materials,
        geometries,
        domain: DomainTag::Source,
        prefix: "cnt",
        period: 1,
    };
    generate_grid(&cfg, &spec, count, window, master, stream, exec, |_| Behaviour::Expert)
}

/// Persist episodes as a dataset plus one `<id>.meta.json` per episode.
pub fn save_episodes(dir: &Path, episodes: &[Episode], domain: DomainTag, dt: f64) -> Result<()> {
    let mut ds = Dataset::new(domain, N_S, N_A, dt);
    ds.trajectories = episodes.iter().map(|e| e.trajectory.clone()).collect();
    save_dataset(dir, &ds)?;
    for e in episodes {
        crate::io::write_json(&dir.join(format!("{}.meta.json", e.meta.id)), &e.meta)?;
    }
    Ok(())
}

pub fn load_meta(dir: &Path, id: &str) -> Result<EpisodeMeta> {
    crate::io::read_json(&dir.join(format!("{id}.meta.json")))
}
