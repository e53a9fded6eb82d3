//! Run configuration and the built-in profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{BcConfig, PolicyArch};
use crate::cutsim::{Geometry, MaterialParams, Perturbation, SimConfig};
use crate::error::{Error, Result};
use crate::evalstat::MetricsConfig;
use crate::styletx::TransferConfig;
use crate::vae::{VaeArch, VaeTrainConfig};

pub const STRATEGIES: [&str; 4] = ["expert", "baseline", "bc-identity", "style-transfer"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source_count: usize,
    pub target_count: usize,
    pub content_count: usize,
    /// Stride when cutting VAE training windows from source trajectories.
    pub vae_stride: usize,
    /// Stride when cutting content windows; 1 keeps every window.
    pub content_stride: usize,
    /// Stride when cutting style windows from target trajectories.
    pub style_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub strategies: Vec<String>,
    /// Episodes per strategy per geometry; materials cycle across them.
    pub episodes_per_geometry: usize,
    pub metrics: MetricsConfig,
    /// N/m, held by the baseline on every axis.
    pub baseline_stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    /// Source domain; content episodes and expert references also run here.
    pub source: SimConfig,
    pub target_perturbation: Perturbation,
    /// Target, content and evaluation materials.
    pub materials: Vec<MaterialParams>,
    pub geometries: Vec<Geometry>,
    pub data: DataConfig,
    pub vae: VaeArch,
    pub vae_train: VaeTrainConfig,
    pub transfer: TransferConfig,
    pub policy: PolicyArch,
    pub distill: BcConfig,
    /// Row stride when relabelling source trajectories for distillation.
    pub distill_stride: usize,
    pub bc: BcConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Full-size hyperparameters and dataset counts.
    pub fn full() -> Self {
        let source = SimConfig::default();
        RunConfig {
            profile: "full".into(),
            seed: 0,
            policy: PolicyArch {
                window: 100,
                k_min: source.impedance.k_min,
                k_max: source.impedance.k_max,
                ..PolicyArch::default()
            },
            source,
            target_perturbation: Perturbation::target_default(),
            materials: MaterialParams::surrogates(),
            geometries: Geometry::standard_set(),
            data: DataConfig {
                source_count: 680,
                target_count: 148,
                content_count: 50,
                vae_stride: 1,
                content_stride: 1,
                style_stride: 1,
            },
            vae: VaeArch::default(),
            vae_train: VaeTrainConfig::default(),
            transfer: TransferConfig::default(),
            distill: BcConfig {
                lr: 1e-3,
                batch: 64,
                epochs: 30,
                val_fraction: 0.2,
                seed: 0,
                freeze_bn: false,
            },
            distill_stride: 2,
            bc: BcConfig {
                lr: 3e-4,
                batch: 64,
                epochs: 10,
                val_fraction: 0.2,
                seed: 0,
                freeze_bn: true,
            },
            eval: EvalConfig {
                strategies: STRATEGIES.iter().map(|s| s.to_string()).collect(),
                episodes_per_geometry: 5,
                metrics: MetricsConfig::default(),
                baseline_stiffness: 1000.0,
            },
        }
    }

    /// Minutes-scale profile: 8 source and 8 target trajectories, 50 VAE
    /// epochs, 100 transfer iterations, narrower networks and a shorter path.
    pub fn smoke() -> Self {
        let mut c = RunConfig::full();
        c.profile = "smoke".into();
        c.source.path_length = 0.1;
        c.data = DataConfig {
            source_count: 8,
            target_count: 8,
            content_count: 4,
            vae_stride: 20,
            content_stride: 25,
            style_stride: 10,
        };
        c.vae.channels = vec![16, 32, 64];
        c.vae.latent_dim = 16;
        c.vae_train.epochs = 50;
        c.vae_train.batch = 32;
        c.transfer.iterations = 100;
        c.policy.channels = vec![8, 16, 32];
        c.distill.epochs = 10;
        c.distill_stride = 4;
        c.bc.epochs = 5;
        c.eval.episodes_per_geometry = 1;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(RunConfig::full()),
            "smoke" => Ok(RunConfig::smoke()),
            _ => Err(Error::Config(format!("unknown profile '{name}' (expected 'full' or 'smoke')"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::require(path, "pass an existing run configuration")?;
        let cfg: RunConfig = crate::io::read_json(path).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target_perturbation.validate()?;
        if self.geometries.is_empty() || self.materials.is_empty() {
            return Err(Error::Config("geometry and material sets must be nonempty".into()));
        }
        let d = &self.data;
        if d.vae_stride == 0 || d.content_stride == 0 || d.style_stride == 0 || self.distill_stride == 0 {
            return Err(Error::Config("window strides must be >= 1".into()));
        }
        if self.vae.window != self.policy.window {
            return Err(Error::Config(format!(
                "VAE window {} and policy window {} must match",
                self.vae.window, self.policy.window
            )));
        }
        if self.vae.n_s != self.policy.n_s {
            return Err(Error::Config("VAE and policy observation channels differ".into()));
        }
        self.vae_train.validate()?;
        self.distill.validate()?;
        self.bc.validate()?;
        for s in &self.eval.strategies {
            if !STRATEGIES.contains(&s.as_str()) {
                return Err(Error::Config(format!("unknown strategy '{s}' (expected one of {STRATEGIES:?})")));
            }
        }
        if !(self.eval.baseline_stiffness >= self.policy.k_min && self.eval.baseline_stiffness <= self.policy.k_max) {
            return Err(Error::Config("baseline stiffness lies outside the stiffness bounds".into()));
        }
        Ok(())
    }

    /// The target domain: the source simulator with the perturbation block.
    pub fn target_sim(&self) -> SimConfig {
        SimConfig {
            perturbation: self.target_perturbation.clone(),
            ..self.source.clone()
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}
