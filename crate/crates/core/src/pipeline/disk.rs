//! On-disk stages. Every stage reads its declared inputs from the run
//! directory, writes its outputs under its own subdirectory, records them in
//! `MANIFEST.json` and leaves a run-log with the wall time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stages::{self, Paired, StrategyPolicy};
use crate::adapt::{BcEpoch, DistillReport, PolicyNet};
use crate::cutsim::{save_episodes, ConstantPolicy};
use crate::error::{Error, Result};
use crate::evalstat::{build_report, read_metrics_csv, render_text, write_metrics_csv, write_plot_csv};
use crate::gradsuite::{run_suite, OpResult};
use crate::io::{read_json, require, write_json, write_text};
use crate::matrix::Matrix;
use crate::pairing::{embed_dataset, export_embeddings, PairingResult};
use crate::par::Exec;
use crate::styletx::{load_adapted, save_adapted, sweep_trend, weight_sweep, write_sweep_csv, SweepRow, TransferConfig};
use crate::trajdata::{load_dataset, DomainTag, Trajectory};
use crate::vae::{train_vae, EpochLoss, Vae, VaeTrainConfig};

pub const MANIFEST: &str = "MANIFEST.json";
pub const SWEEP_RATIOS: [f64; 5] = [0.002, 0.005, 0.02, 0.1, 0.5];
/// Pairs used by the weight sweep.
pub const SWEEP_PAIRS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeSweepRow {
    pub latent_dim: usize,
    pub beta: f64,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// A run directory bound to one effective configuration.
pub struct Run {
    root: PathBuf,
    cfg: RunConfig,
    hash: String,
    exec: Exec,
    warnings: Vec<String>,
    all_warnings: Vec<String>,
}

fn rel(path: &str, file: &str) -> String {
    format!("{path}/{file}")
}

/// Every file under `dir`, relative to `root`, sorted.
fn list_files(root: &Path, dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(r) = p.strip_prefix(root) {
                out.push(r.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Run {
    pub fn new(root: impl Into<PathBuf>, cfg: RunConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let hash = cfg.hash();
        Ok(Run {
            root,
            cfg,
            hash,
            exec,
            warnings: Vec::new(),
            all_warnings: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path(MANIFEST);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(Manifest::default())
        }
    }

    /// Require an upstream stage's output and warn when it was produced
    /// under a different configuration.
    fn need(&mut self, stage: &str, file: &str) -> Result<PathBuf> {
        let p = self.path(&rel(stage, file));
        require(&p, &format!("run the {stage} stage first"))?;
        if let Some(e) = self.manifest()?.stages.get(stage) {
            if e.config_hash != self.hash {
                let w = format!(
                    "config-hash mismatch: {stage} was produced by config {} but this stage runs under {}",
                    &e.config_hash[..12.min(e.config_hash.len())],
                    &self.hash[..12]
                );
                log::warn!("{w}");
                if !self.warnings.contains(&w) {
                    self.warnings.push(w);
                }
            }
        }
        Ok(p)
    }

    /// Clear a stage's output directory before it is rewritten.
    fn fresh(&self, stage: &str) -> Result<PathBuf> {
        let d = self.path(stage);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn finish(&mut self, stage: &str, inputs: &[&str], started: (u64, Instant)) -> Result<()> {
        let stage_warnings: Vec<String> = std::mem::take(&mut self.warnings);
        let outputs = list_files(&self.root, &self.path(stage))?;
        let mut m = self.manifest()?;
        m.stages.insert(
            stage.to_string(),
            StageEntry {
                config_hash: self.hash.clone(),
                seed: self.cfg.seed,
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
                outputs,
            },
        );
        write_json(&self.path(MANIFEST), &m)?;
        write_json(&self.path(&format!("configs/{}.json", self.hash)), &self.cfg)?;
        let log = RunLog {
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            started_unix: started.0,
            wall_time_s: started.1.elapsed().as_secs_f64(),
            warnings: stage_warnings.clone(),
        };
        write_json(&self.path(&format!("runlog/{stage}.json")), &log)?;
        self.all_warnings.extend(stage_warnings);
        Ok(())
    }

    fn start() -> (u64, Instant) {
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        (unix, Instant::now())
    }

    /// Config-hash warnings raised by the stages run so far.
    pub fn warnings(&self) -> &[String] {
        &self.all_warnings
    }

    fn load_trajectories(&mut self, stage: &str) -> Result<Vec<Trajectory>> {
        let p = self.need(stage, "manifest.json")?;
        Ok(load_dataset(p.parent().expect("stage dir"))?.trajectories)
    }

    fn load_vae(&mut self) -> Result<Vae> {
        Vae::load(&self.need("train-vae", "vae.json")?)
    }

    fn load_pairing(&mut self) -> Result<PairingResult> {
        PairingResult::load(&self.need("pair", "pairing.json")?)
    }

    /// Source and content episodes.
    pub fn simulate(&mut self) -> Result<()> {
        let t = Self::start();
        let dir = self.fresh("simulate")?;
        let dt = self.cfg.source.obs_dt;
        let source = stages::simulate_source(&self.cfg, self.exec)?;
        save_episodes(&dir.join("source"), &source, DomainTag::Source, dt)?;
        let content = stages::simulate_content(&self.cfg, self.exec)?;
        save_episodes(&dir.join("content"), &content, DomainTag::Source, dt)?;
        self.finish("simulate", &[], t)
    }

    pub fn gen_target(&mut self) -> Result<()> {
        let t = Self::start();
        let dir = self.fresh("gen-target")?;
        let target = stages::simulate_target(&self.cfg, self.exec)?;
        save_episodes(&dir, &target, DomainTag::Target, self.cfg.target_sim().obs_dt)?;
        self.finish("gen-target", &[], t)
    }

    fn source(&mut self) -> Result<Vec<Trajectory>> {
        let p = self.need("simulate", "source/manifest.json")?;
        Ok(load_dataset(p.parent().expect("source dir"))?.trajectories)
    }

    fn content(&mut self) -> Result<Vec<Trajectory>> {
        let p = self.need("simulate", "content/manifest.json")?;
        Ok(load_dataset(p.parent().expect("content dir"))?.trajectories)
    }

    pub fn train_vae(&mut self) -> Result<Vec<EpochLoss>> {
        let t = Self::start();
        let source = self.source()?;
        let dir = self.fresh("train-vae")?;
        let norm = stages::source_norm(&source)?;
        let (vae, hist) = stages::train_vae_stage(&self.cfg, &source, &norm, self.exec)?;
        vae.save(&dir.join("vae.json"))?;
        write_json(&dir.join("norm.json"), &norm)?;
        write_json(&dir.join("history.json"), &hist)?;
        self.finish("train-vae", &["simulate"], t)?;
        Ok(hist)
    }

    /// Train one VAE per (latent dim, beta) and report its final epoch.
    pub fn sweep_vae(&mut self, latent_dims: &[usize], betas: &[f64]) -> Result<Vec<VaeSweepRow>> {
        let t = Self::start();
        let source = self.source()?;
        let dir = self.fresh("sweep-vae")?;
        let norm = stages::source_norm(&source)?;
        let windows = stages::normalised_windows(&source, &norm, self.cfg.vae.window, self.cfg.data.vae_stride, self.exec)?;
        let data: Vec<Matrix> = windows.into_iter().map(|w| w.data).collect();
        let mut rows = Vec::new();
        for &d in latent_dims {
            for &beta in betas {
                let arch = crate::vae::VaeArch {
                    latent_dim: d,
                    ..self.cfg.vae.clone()
                };
                let mut vae = Vae::new(arch, self.cfg.seed)?;
                let tc = VaeTrainConfig {
                    kl_weight: beta,
                    seed: self.cfg.seed,
                    ..self.cfg.vae_train.clone()
                };
                let hist = train_vae(&mut vae, &data, &tc)?;
                let last = hist.last().copied().ok_or_else(|| Error::Config("sweep needs at least one epoch".into()))?;
                rows.push(VaeSweepRow {
                    latent_dim: d,
                    beta,
                    recon: last.recon,
                    kl: last.kl,
                    total: last.total,
                });
            }
        }
        let mut csv = String::from("latent_dim,beta,recon,kl,total\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{:.10e},{:.10e},{:.10e}\n", r.latent_dim, r.beta, r.recon, r.kl, r.total));
        }
        write_text(&dir.join("sweep.csv"), &csv)?;
        self.finish("sweep-vae", &["simulate"], t)?;
        Ok(rows)
    }

    pub fn distill_expert(&mut self) -> Result<DistillReport> {
        let t = Self::start();
        let source = self.source()?;
        let dir = self.fresh("distill-expert")?;
        let norm = stages::source_norm(&source)?;
        let (net, report) = stages::distill_stage(&self.cfg, &source, &norm)?;
        net.save(&dir.join("policy.json"))?;
        write_json(&dir.join("report.json"), &report)?;
        self.finish("distill-expert", &["simulate"], t)?;
        Ok(report)
    }

    fn paired(&mut self, pairing: PairingResult) -> Result<(Paired, Vec<Trajectory>)> {
        let source = self.source()?;
        let content = self.content()?;
        let target = self.load_trajectories("gen-target")?;
        let norm = stages::source_norm(&source)?;
        let n = self.cfg.vae.window;
        let contents = stages::normalised_windows(&content, &norm, n, self.cfg.data.content_stride, self.exec)?;
        let styles = stages::normalised_windows(&target, &norm, n, self.cfg.data.style_stride, self.exec)?;
        Ok((Paired { contents, styles, pairing }, content))
    }

    pub fn pair(&mut self) -> Result<PairingResult> {
        let t = Self::start();
        let source = self.source()?;
        let content = self.content()?;
        let target = self.load_trajectories("gen-target")?;
        let vae = self.load_vae()?;
        let dir = self.fresh("pair")?;
        let norm = stages::source_norm(&source)?;
        let paired = stages::pair_stage(&self.cfg, &content, &target, &norm, &vae, self.exec)?;
        paired.pairing.save(&dir.join("pairing.json"))?;
        let c = embed_dataset(&paired.contents, &vae, DomainTag::Source, self.exec)?;
        let s = embed_dataset(&paired.styles, &vae, DomainTag::Target, self.exec)?;
        export_embeddings(&dir.join("embeddings.csv"), &c, &s, Some(&paired.pairing))?;
        self.finish("pair", &["simulate", "gen-target", "train-vae"], t)?;
        Ok(paired.pairing)
    }

    fn adapted_strategies(&self) -> Vec<String> {
        self.cfg
            .eval
            .strategies
            .iter()
            .filter(|s| *s == "bc-identity" || *s == "style-transfer")
            .cloned()
            .collect()
    }

    fn transfer_config(&self, strategy: &str) -> TransferConfig {
        if strategy == "bc-identity" {
            TransferConfig::identity()
        } else {
            self.cfg.transfer.clone()
        }
    }

    /// Adapted datasets for every strategy that fine-tunes on one.
    pub fn transfer(&mut self) -> Result<Vec<(String, usize)>> {
        let t = Self::start();
        let vae = self.load_vae()?;
        let pairing = self.load_pairing()?;
        let (paired, content) = self.paired(pairing)?;
        let dir = self.fresh("transfer")?;
        let mut sizes = Vec::new();
        for s in self.adapted_strategies() {
            let ds = stages::transfer_stage(&paired, &content, &vae, &self.transfer_config(&s), self.exec)?;
            save_adapted(&dir.join(&s), &ds)?;
            sizes.push((s, ds.len()));
        }
        self.finish("transfer", &["simulate", "gen-target", "train-vae", "pair"], t)?;
        Ok(sizes)
    }

    pub fn adapt(&mut self) -> Result<Vec<(String, Vec<BcEpoch>)>> {
        let t = Self::start();
        let expert = PolicyNet::load(&self.need("distill-expert", "policy.json")?)?;
        let mut data = Vec::new();
        for s in self.adapted_strategies() {
            let p = self.need("transfer", &format!("{s}/provenance.json"))?;
            data.push((s, load_adapted(p.parent().expect("transfer dir"))?));
        }
        let dir = self.fresh("adapt")?;
        let mut out = Vec::new();
        for (s, ds) in data {
            let (net, hist) = stages::adapt_stage(&self.cfg, &expert, &ds, &s)?;
            net.save(&dir.join(&s).join("policy.json"))?;
            write_json(&dir.join(&s).join("history.json"), &hist)?;
            out.push((s, hist));
        }
        self.finish("adapt", &["distill-expert", "transfer"], t)?;
        Ok(out)
    }

    pub fn evaluate(&mut self) -> Result<Vec<crate::evalstat::MetricsRow>> {
        let t = Self::start();
        let mut policies = Vec::new();
        let mut inputs = Vec::new();
        for s in self.cfg.eval.strategies.clone() {
            let p = match s.as_str() {
                "expert" => {
                    inputs.push("distill-expert");
                    let mut net = PolicyNet::load(&self.need("distill-expert", "policy.json")?)?;
                    net.name = "expert".into();
                    StrategyPolicy::Net(net)
                }
                "baseline" => StrategyPolicy::Constant(ConstantPolicy::baseline(self.cfg.eval.baseline_stiffness, self.cfg.policy.window)),
                other => {
                    inputs.push("adapt");
                    StrategyPolicy::Net(PolicyNet::load(&self.need("adapt", &format!("{other}/policy.json"))?)?)
                }
            };
            policies.push((s, p));
        }
        inputs.dedup();
        let dir = self.fresh("evaluate")?;
        let rows = stages::evaluate_stage(&self.cfg, &policies, self.exec)?;
        write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
        self.finish("evaluate", &inputs, t)?;
        Ok(rows)
    }

    pub fn report(&mut self) -> Result<String> {
        let t = Self::start();
        let rows = read_metrics_csv(&self.need("evaluate", "metrics.csv")?)?;
        let dir = self.fresh("report")?;
        let report = build_report(&rows);
        let text = render_text(&report);
        write_json(&dir.join("report.json"), &report)?;
        write_text(&dir.join("report.txt"), &text)?;
        write_plot_csv(&dir.join("plot.csv"), &rows)?;
        self.finish("report", &["evaluate"], t)?;
        Ok(text)
    }

    /// Content/style trade-off over [`SWEEP_RATIOS`] on the first paired
    /// windows.
    pub fn sweep_weights(&mut self) -> Result<Vec<SweepRow>> {
        let t = Self::start();
        let vae = self.load_vae()?;
        let pairing = self.load_pairing()?;
        let (paired, _) = self.paired(pairing)?;
        let dir = self.fresh("sweep-weights")?;
        let m = paired.pairing.matches();
        let k = SWEEP_PAIRS.min(m.len());
        let contents: Vec<&Matrix> = paired.contents[..k].iter().map(|w| &w.data).collect();
        let styles: Vec<&Matrix> = m[..k].iter().map(|&j| &paired.styles[j].data).collect();
        let rows = weight_sweep(&contents, &styles, &vae, &self.cfg.transfer, &SWEEP_RATIOS, self.exec)?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
        let (c, s) = sweep_trend(&rows);
        write_json(
            &dir.join("trend.json"),
            &serde_json::json!({ "content_nonincreasing": c, "style_nondecreasing": s }),
        )?;
        self.finish("sweep-weights", &["simulate", "gen-target", "train-vae", "pair"], t)?;
        Ok(rows)
    }

    pub fn grad_check(&mut self, trials: usize, tolerance: f64) -> Result<Vec<OpResult>> {
        let t = Self::start();
        let dir = self.fresh("grad-check")?;
        let res = run_suite(trials, self.cfg.seed, tolerance)?;
        write_json(&dir.join("results.json"), &res)?;
        self.finish("grad-check", &[], t)?;
        Ok(res)
    }

    /// Every stage from simulation to the report.
    pub fn run_all(&mut self) -> Result<String> {
        self.simulate()?;
        self.gen_target()?;
        self.train_vae()?;
        self.pair()?;
        self.distill_expert()?;
        self.transfer()?;
        self.adapt()?;
        self.evaluate()?;
        self.report()
    }
}
