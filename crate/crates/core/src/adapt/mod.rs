//! Behavioural-cloning policies.
//!
//! A [`PolicyNet`] reads the most recent `N × N_S` observation window, maps it
//! through a convolutional trunk and squashes five outputs into the action
//! bounds. The scripted expert is first distilled into a net so that
//! initialising the adapted policy from the expert is a parameter copy.

mod eval;

pub use eval::{evaluate_indices, evaluate_policy, EvalContext, EvalEpisode};

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cutsim::{action_bounds, Action, Policy, ScriptedExpert, N_A, N_S};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkern::{sigmoid, Adam, AdamConfig, Checkpoint, HasParams, Mode, Param, Tensor3};
use crate::rng::{rng_from, stream};
use crate::trajdata::{history_window, NormStats, Trajectory};
use crate::vae::{set_grads, windows_to_tensor, ConvTrunk, TrunkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub n_s: usize,
    pub window: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// N/m
    pub k_min: f64,
    pub k_max: f64,
}

impl Default for PolicyArch {
    fn default() -> Self {
        PolicyArch {
            n_s: N_S,
            window: 100,
            channels: vec![32, 64, 128],
            kernel: 3,
            stride: 2,
            padding: 1,
            k_min: 200.0,
            k_max: 5000.0,
        }
    }
}

impl PolicyArch {
    pub fn trunk_spec(&self) -> TrunkSpec {
        TrunkSpec {
            in_channels: self.n_s,
            length: self.window,
            channels: self.channels.clone(),
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            out_dim: N_A,
        }
    }

    pub fn bounds(&self) -> [(f64, f64); N_A] {
        action_bounds(self.k_min, self.k_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub name: String,
    pub arch: PolicyArch,
    pub trunk: ConvTrunk,
    /// Applied to raw observation windows before the trunk.
    pub norm: NormStats,
}

impl PolicyNet {
    pub fn new(name: &str, arch: PolicyArch, norm: NormStats, seed: u64) -> Result<Self> {
        if norm.channels() != arch.n_s {
            return Err(Error::Shape(format!(
                "normalisation has {} channels, policy expects {}",
                norm.channels(),
                arch.n_s
            )));
        }
        if !(arch.k_min > 0.0 && arch.k_max > arch.k_min) {
            return Err(Error::Config(format!("stiffness bounds [{}, {}] are invalid", arch.k_min, arch.k_max)));
        }
        let mut rng = rng_from(seed, stream::POLICY_INIT, 0);
        let trunk = ConvTrunk::new("policy", arch.trunk_spec(), &mut rng)?;
        Ok(PolicyNet {
            name: name.to_string(),
            arch,
            trunk,
            norm,
        })
    }

    /// Outputs in action units (`[0, 1]` per channel) for windows that are
    /// already normalised; row-major `B × N_A`.
    pub fn predict_units(&self, windows: &[&Matrix]) -> Result<Vec<f64>> {
        let x = windows_to_tensor(windows)?;
        let cache = self.trunk.forward_eval(&x, None)?;
        let u: Vec<f64> = cache.head.iter().map(|&z| sigmoid(z)).collect();
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("policy '{}' output", self.name)));
        }
        Ok(u)
    }

    /// Action for a raw observation window.
    pub fn action(&self, raw: &Matrix) -> Result<Action> {
        let w = self.norm.applied(raw);
        let u = self.predict_units(&[&w])?;
        Ok(units_to_action(&u, &self.arch.bounds()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "policy",
            "name": self.name,
            "arch": self.arch,
            "norm": self.norm,
        }));
        self.trunk.write_checkpoint("", &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        if ck.meta["kind"] != "policy" {
            return Err(Error::Invalid(format!("checkpoint kind {} is not a policy", ck.meta["kind"])));
        }
        let arch: PolicyArch = serde_json::from_value(ck.meta["arch"].clone())
            .map_err(|e| Error::Invalid(format!("checkpoint architecture: {e}")))?;
        let norm: NormStats = serde_json::from_value(ck.meta["norm"].clone())
            .map_err(|e| Error::Invalid(format!("checkpoint normalisation: {e}")))?;
        let name = ck.meta["name"].as_str().unwrap_or("policy").to_string();
        let mut p = PolicyNet::new(&name, arch, norm, 0)?;
        p.trunk.read_checkpoint("", ck)?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::require(path, "train or distill the policy first")?;
        PolicyNet::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl HasParams for PolicyNet {
    fn params(&self) -> Vec<&Param> {
        self.trunk.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }
}

impl Policy for PolicyNet {
    fn name(&self) -> &str {
        &self.name
    }

    fn window(&self) -> usize {
        self.arch.window
    }

    fn act(&mut self, window: &Matrix) -> Result<Action> {
        self.action(window)
    }
}

pub fn units_to_action(u: &[f64], bounds: &[(f64, f64); N_A]) -> Action {
    let mut v = [0.0; N_A];
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        v[i] = (lo + (hi - lo) * u[i]).clamp(*lo, *hi);
    }
    Action::from_slice(&v)
}

pub fn action_to_units(a: &Action, bounds: &[(f64, f64); N_A]) -> [f64; N_A] {
    let v = a.to_vec();
    let mut u = [0.0; N_A];
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        u[i] = (v[i] - lo) / (hi - lo);
    }
    u
}

/// The adapted policy's starting point: an exact copy of the expert net.
pub fn clone_expert_policy(expert: &PolicyNet, name: &str) -> PolicyNet {
    let mut p = expert.clone();
    p.name = name.to_string();
    p
}

/// Copy every parameter and normalisation statistic from `src` into `dst`.
pub fn copy_policy(dst: &mut PolicyNet, src: &PolicyNet) -> Result<()> {
    if dst.arch != src.arch {
        return Err(Error::Shape(format!(
            "policy architectures differ: {:?} vs {:?}",
            dst.arch, src.arch
        )));
    }
    dst.trunk = src.trunk.clone();
    dst.norm = src.norm.clone();
    Ok(())
}

/// Normalised input windows with labels in action units.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledWindows {
    pub windows: Vec<Matrix>,
    /// `len × N_A`.
    pub labels: Matrix,
    /// `(trajectory id, final row)` of each window.
    pub origin: Vec<(String, usize)>,
}

impl LabelledWindows {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Label the history window at every `stride`-th row of each trajectory with
/// the scripted expert's action. Trajectories may come from any behaviour,
/// including on-policy rollouts of a learner, which gives DAgger-style
/// aggregation the same output as the off-policy case.
pub fn relabel_with_expert(
    trajs: &[Trajectory],
    expert: &ScriptedExpert,
    norm: &NormStats,
    bounds: &[(f64, f64); N_A],
    stride: usize,
) -> Result<LabelledWindows> {
    if stride == 0 {
        return Err(Error::Invalid("relabel stride must be >= 1".into()));
    }
    let n = expert.window;
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    let mut origin = Vec::new();
    for t in trajs {
        if t.n_s() != norm.channels() {
            return Err(Error::Shape(format!("trajectory '{}' has {} channels, expected {}", t.id, t.n_s(), norm.channels())));
        }
        for row in (0..t.len()).step_by(stride) {
            let raw = history_window(&t.states, row, n);
            labels.extend(action_to_units(&expert.evaluate(&raw), bounds));
            windows.push(norm.applied(&raw));
            origin.push((t.id.clone(), row));
        }
    }
    let labels = Matrix::from_vec(windows.len(), N_A, labels)?;
    Ok(LabelledWindows { windows, labels, origin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Keep batch-norm statistics fixed (eval-mode forward and backward).
    pub freeze_bn: bool,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            lr: 1e-3,
            batch: 64,
            epochs: 30,
            val_fraction: 0.2,
            seed: 0,
            freeze_bn: false,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "behavioural cloning needs lr > 0, batch >= 1 and val_fraction in (0, 1) (got {}, {}, {})",
                self.lr, self.batch, self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcEpoch {
    pub epoch: usize,
    pub train: f64,
    /// NaN when the validation split is empty.
    pub val: f64,
}

/// Mean squared error in action units and its gradient with respect to the
/// pre-squash head outputs.
pub fn bc_loss(head: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let m = head.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(head.len());
    for (&z, &y) in head.iter().zip(labels) {
        let s = sigmoid(z);
        let d = s - y;
        loss += d * d;
        grad.push(2.0 * d * s * (1.0 - s) / m);
    }
    (loss / m, grad)
}

/// Split `0..n` into shuffled train and validation index sets. At least one
/// sample always stays in training.
pub fn train_val_split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, stream::POLICY_TRAIN, 1));
    let n_val = ((n as f64 * val_fraction).floor() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn rows_of(labels: &Matrix, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| labels.row(i).iter().copied()).collect()
}

/// Mean per-element squared error in action units (eval mode).
pub fn bc_eval_loss(policy: &PolicyNet, windows: &[Matrix], labels: &Matrix, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let refs: Vec<&Matrix> = chunk.iter().map(|&i| &windows[i]).collect();
        let x = windows_to_tensor(&refs)?;
        let cache = policy.trunk.forward_eval(&x, None)?;
        let (l, _) = bc_loss(&cache.head, &rows_of(labels, chunk));
        total += l * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Loss and parameter gradients for one batch.
pub fn bc_batch_grads(policy: &mut PolicyNet, x: &Tensor3, labels: &[f64], mode: Mode) -> Result<(f64, Vec<Vec<f64>>)> {
    let cache = match mode {
        Mode::Train => policy.trunk.forward(x, Mode::Train, None)?,
        Mode::Eval => policy.trunk.forward_eval(x, None)?,
    };
    let (loss, g) = bc_loss(&cache.head, labels);
    let grads = policy.trunk.backward(&cache, Some(&g), &[], true, false)?;
    Ok((loss, grads.params.expect("requested")))
}

/// Behavioural cloning by Adam on shuffled mini-batches. Inputs are
/// normalised windows, labels are in action units. A seeded fraction of the
/// samples is held out for validation. Returns per-epoch losses.
pub fn train_bc(policy: &mut PolicyNet, windows: &[Matrix], labels: &Matrix, cfg: &BcConfig) -> Result<Vec<BcEpoch>> {
    cfg.validate()?;
    let (train, val) = train_val_split(windows.len(), cfg.val_fraction, cfg.seed);
    train_bc_split(policy, windows, labels, train, &val, cfg)
}

/// [`train_bc`] with explicit training and validation indices.
pub fn train_bc_split(
    policy: &mut PolicyNet,
    windows: &[Matrix],
    labels: &Matrix,
    mut train: Vec<usize>,
    val: &[usize],
    cfg: &BcConfig,
) -> Result<Vec<BcEpoch>> {
    cfg.validate()?;
    if windows.is_empty() || train.is_empty() {
        return Err(Error::Invalid("behavioural cloning needs a nonempty training set".into()));
    }
    if labels.rows != windows.len() || labels.cols != N_A {
        return Err(Error::Shape(format!(
            "{} windows but labels are {}×{}",
            windows.len(),
            labels.rows,
            labels.cols
        )));
    }
    if labels.data.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
        return Err(Error::Invalid("labels must lie within the action bounds".into()));
    }
    let mut rng = rng_from(cfg.seed, stream::POLICY_TRAIN, 0);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mode = if cfg.freeze_bn { Mode::Eval } else { Mode::Train };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        for (bi, idx) in train.chunks(cfg.batch).enumerate() {
            let refs: Vec<&Matrix> = idx.iter().map(|&i| &windows[i]).collect();
            let x = windows_to_tensor(&refs)?;
            let (loss, grads) = bc_batch_grads(policy, &x, &rows_of(labels, idx), mode)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("BC loss is {loss} at epoch {epoch}, batch {bi}")));
            }
            set_grads(policy, &grads)?;
            let mut ps = policy.params_mut();
            opt.step(&mut ps)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}, batch {bi}: {e}")))?;
            sum += loss * idx.len() as f64;
        }
        let rec = BcEpoch {
            epoch,
            train: sum / train.len() as f64,
            val: bc_eval_loss(policy, windows, labels, val)?,
        };
        log::debug!("bc epoch {epoch}: train {:.3e} val {:.3e}", rec.train, rec.val);
        history.push(rec);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub history: Vec<BcEpoch>,
    /// Root-mean-square error in action units on held-out trajectories.
    pub val_rms: f64,
    pub train_windows: usize,
    pub val_windows: usize,
}

/// Fit a fresh net to the scripted expert on history windows of `trajs`.
/// Whole trajectories are held out for validation.
pub fn distill_expert(
    expert: &ScriptedExpert,
    trajs: &[Trajectory],
    arch: PolicyArch,
    norm: NormStats,
    cfg: &BcConfig,
    stride: usize,
) -> Result<(PolicyNet, DistillReport)> {
    cfg.validate()?;
    if arch.window != expert.window {
        return Err(Error::Config(format!("policy window {} differs from the expert's {}", arch.window, expert.window)));
    }
    let bounds = arch.bounds();
    let (tr, va) = train_val_split(trajs.len(), cfg.val_fraction, cfg.seed);
    let pick = |idx: &[usize]| -> Vec<Trajectory> {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| trajs[i].clone()).collect()
    };
    let mut data = relabel_with_expert(&pick(&tr), expert, &norm, &bounds, stride)?;
    let n_train = data.len();
    let val = relabel_with_expert(&pick(&va), expert, &norm, &bounds, stride)?;
    let mut labels = data.labels.data;
    labels.extend_from_slice(&val.labels.data);
    data.windows.extend(val.windows);
    let labels = Matrix::from_vec(data.windows.len(), N_A, labels)?;
    let val_idx: Vec<usize> = (n_train..data.windows.len()).collect();
    let mut policy = PolicyNet::new("expert", arch, norm, cfg.seed)?;
    let history = train_bc_split(&mut policy, &data.windows, &labels, (0..n_train).collect(), &val_idx, cfg)?;
    let val_mse = bc_eval_loss(&policy, &data.windows, &labels, &val_idx)?;
    Ok((
        policy,
        DistillReport {
            history,
            val_rms: val_mse.sqrt(),
            train_windows: n_train,
            val_windows: val_idx.len(),
        },
    ))
}

#[cfg(test)]
mod tests;
