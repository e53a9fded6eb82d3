//! Windowed trajectory VAE.
//!
//! The encoder is a [`ConvTrunk`] whose head emits `(μ, log σ²)`; the decoder
//! mirrors it with transposed convolutions. Windows enter as `N × N_S`
//! matrices and are fed to the networks channel-major.

mod decoder;
mod trunk;

pub use decoder::{Decoder, DecoderCache};
pub use trunk::{ConvTrunk, TrunkCache, TrunkGrads, TrunkSpec};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkern::{Adam, AdamConfig, Checkpoint, HasParams, Mode, Param, Tensor3};
use crate::par::{self, Exec};
use crate::rng::{rng_from, stream, Rng};

/// Style layers: act1, act2 and bn3 in the trunk enumeration.
pub const STYLE_LAYERS: [usize; 3] = [2, 5, 7];
/// Content layer: act2.
pub const CONTENT_LAYER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub n_s: usize,
    pub window: usize,
    pub latent_dim: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch {
            n_s: 7,
            window: 100,
            latent_dim: 130,
            channels: vec![128, 256, 512],
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }
}

impl VaeArch {
    pub fn encoder_spec(&self) -> TrunkSpec {
        TrunkSpec {
            in_channels: self.n_s,
            length: self.window,
            channels: self.channels.clone(),
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            out_dim: 2 * self.latent_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub arch: VaeArch,
    pub encoder: ConvTrunk,
    pub decoder: Decoder,
}

/// Posterior parameters and a reparametrised sample `μ + exp(log σ² / 2) ⊙ ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub sample: Vec<f64>,
    pub eps: Vec<f64>,
}

impl LatentCode {
    pub fn from_parts(mu: Vec<f64>, log_var: Vec<f64>, eps: Vec<f64>) -> Self {
        let sample = reparametrise(&mu, &log_var, &eps);
        LatentCode {
            mu,
            log_var,
            sample,
            eps,
        }
    }
}

pub fn reparametrise(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// KL divergence of `N(μ, diag σ²)` from `N(0, I)`.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Negated ELBO for one window: `½‖x − x̂‖² + β·KL`.
pub fn elbo_loss(window: &Matrix, mu: &[f64], log_var: &[f64], recon: &Matrix, beta: f64) -> Result<ElboParts> {
    if !window.same_shape(recon) {
        return Err(Error::Shape(format!(
            "window {}×{} vs reconstruction {}×{}",
            window.rows, window.cols, recon.rows, recon.cols
        )));
    }
    if mu.len() != log_var.len() {
        return Err(Error::Shape(format!("μ has {} entries, log σ² has {}", mu.len(), log_var.len())));
    }
    let r = 0.5 * window.data.iter().zip(&recon.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let kl = kl_divergence(mu, log_var);
    let total = r + beta * kl;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("ELBO (recon {r}, kl {kl})")));
    }
    Ok(ElboParts { total, recon: r, kl })
}

/// Stack `N × N_S` windows into a `(B, N_S, N)` tensor.
pub fn windows_to_tensor(windows: &[&Matrix]) -> Result<Tensor3> {
    let first = windows.first().ok_or_else(|| Error::Shape("no windows".into()))?;
    let (n, c) = (first.rows, first.cols);
    let mut t = Tensor3::zeros(windows.len(), c, n);
    for (b, w) in windows.iter().enumerate() {
        if w.rows != n || w.cols != c {
            return Err(Error::Shape(format!("window {b} is {}×{}, expected {n}×{c}", w.rows, w.cols)));
        }
        let s = t.sample_mut(b);
        for r in 0..n {
            for ch in 0..c {
                s[ch * n + r] = w.data[r * c + ch];
            }
        }
    }
    Ok(t)
}

/// Sample `b` of a `(B, N_S, N)` tensor as an `N × N_S` window.
pub fn tensor_to_window(t: &Tensor3, b: usize) -> Matrix {
    let (c, n) = (t.channels, t.length);
    let s = t.sample(b);
    let mut m = Matrix::zeros(n, c);
    for r in 0..n {
        for ch in 0..c {
            m.data[r * c + ch] = s[ch * n + r];
        }
    }
    m
}

/// One layer's features for one window, `C_l × M_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: usize,
    pub data: Matrix,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStack {
    pub layers: Vec<FeatureMap>,
}

impl FeatureStack {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn get(&self, layer: usize) -> Option<&Matrix> {
        self.layers.iter().find(|f| f.layer == layer).map(|f| &f.data)
    }
}

impl Vae {
    pub fn new(arch: VaeArch, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed, stream::VAE_INIT, 0);
        let encoder = ConvTrunk::new("enc", arch.encoder_spec(), &mut rng)?;
        let decoder = Decoder::new("dec", &arch.encoder_spec(), arch.latent_dim, &mut rng)?;
        Ok(Vae { arch, encoder, decoder })
    }

    fn split_head(&self, head: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.arch.latent_dim;
        let mut mu = Vec::with_capacity(b * l);
        let mut lv = Vec::with_capacity(b * l);
        for row in head.chunks(2 * l) {
            mu.extend_from_slice(&row[..l]);
            lv.extend_from_slice(&row[l..]);
        }
        (mu, lv)
    }

    /// Eval-mode posterior parameters for a batch, row-major `B × L` each.
    pub fn posterior(&self, windows: &[&Matrix]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = windows_to_tensor(windows)?;
        let cache = self.encoder.forward_eval(&x, None)?;
        if cache.head.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(self.split_head(&cache.head, windows.len()))
    }

    /// Encode with noise drawn from `rng`.
    pub fn encode(&self, window: &Matrix, rng: &mut Rng) -> Result<LatentCode> {
        let eps: Vec<f64> = (0..self.arch.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.encode_with_noise(window, &eps)
    }

    pub fn encode_with_noise(&self, window: &Matrix, eps: &[f64]) -> Result<LatentCode> {
        if eps.len() != self.arch.latent_dim {
            return Err(Error::Shape(format!("noise has {} entries, latent is {}", eps.len(), self.arch.latent_dim)));
        }
        let (mu, lv) = self.posterior(&[window])?;
        Ok(LatentCode::from_parts(mu, lv, eps.to_vec()))
    }

    /// Posterior means for many windows, evaluated in chunks.
    pub fn encode_means(&self, windows: &[Matrix], chunk: usize, exec: Exec) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[Matrix]> = windows.chunks(chunk.max(1)).collect();
        let parts = par::map(exec, &chunks, |_, ws| {
            let refs: Vec<&Matrix> = ws.iter().collect();
            self.posterior(&refs)
        });
        let l = self.arch.latent_dim;
        let mut out = Vec::with_capacity(windows.len());
        for p in parts {
            let (mu, _) = p?;
            out.extend(mu.chunks(l).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Decoder mean for one latent vector.
    pub fn decode(&self, z: &[f64]) -> Result<Matrix> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::Shape(format!("latent has {} entries, expected {}", z.len(), self.arch.latent_dim)));
        }
        let cache = self.decoder.forward_eval(z)?;
        Ok(tensor_to_window(&cache.output, 0))
    }

    /// Batch-mean loss and its parameter gradients (encoder then decoder, in
    /// [`HasParams`] order). `eps` is row-major `B × L`.
    pub fn loss_and_grads(&mut self, x: &Tensor3, eps: &[f64], beta: f64, mode: Mode) -> Result<(ElboParts, Vec<Vec<f64>>)> {
        let b = x.batch;
        let l = self.arch.latent_dim;
        if eps.len() != b * l {
            return Err(Error::Shape(format!("noise has {} entries, expected {}", eps.len(), b * l)));
        }
        let enc = self.encoder.forward(x, mode, None)?;
        let (mu, lv) = self.split_head(&enc.head, b);
        let z = reparametrise(&mu, &lv, eps);
        let dec = self.decoder.forward(&z, mode)?;
        let inv_b = 1.0 / b as f64;

        let mut recon = 0.0;
        let mut grad_out = dec.output.clone();
        for (g, xv) in grad_out.data.iter_mut().zip(&x.data) {
            let d = *g - xv;
            recon += 0.5 * d * d;
            *g = d * inv_b;
        }
        let kl = kl_divergence(&mu, &lv);
        let parts = ElboParts {
            total: (recon + beta * kl) * inv_b,
            recon: recon * inv_b,
            kl: kl * inv_b,
        };
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("ELBO (recon {}, kl {})", parts.recon, parts.kl)));
        }

        let (gz, dec_grads) = self.decoder.backward(&dec, &grad_out)?;
        let mut gh = vec![0.0; b * 2 * l];
        for i in 0..b {
            for j in 0..l {
                let k = i * l + j;
                let s = (0.5 * lv[k]).exp();
                gh[i * 2 * l + j] = gz[k] + beta * mu[k] * inv_b;
                gh[i * 2 * l + l + j] = gz[k] * eps[k] * 0.5 * s + beta * 0.5 * (lv[k].exp() - 1.0) * inv_b;
            }
        }
        let enc_grads = self.encoder.backward(&enc, Some(&gh), &[], true, false)?;
        let mut grads = enc_grads.params.expect("requested");
        grads.extend(dec_grads);
        Ok((parts, grads))
    }

    /// Features of each window at `layers` (ascending, deduplicated), eval mode.
    pub fn extract_features(&self, windows: &[&Matrix], layers: &[usize]) -> Result<Vec<FeatureStack>> {
        let spec = &self.encoder.spec;
        for &i in layers {
            spec.layer_shape(i)?;
        }
        if layers.is_empty() {
            return Ok(vec![FeatureStack::default(); windows.len()]);
        }
        let mut idx = layers.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let x = windows_to_tensor(windows)?;
        let cache = self.encoder.forward_eval(&x, idx.last().copied())?;
        let mut out = vec![FeatureStack::default(); windows.len()];
        for &i in &idx {
            let t = cache.layer(i)?;
            for (b, stack) in out.iter_mut().enumerate() {
                stack.layers.push(FeatureMap {
                    layer: i,
                    data: Matrix::from_vec(t.channels, t.length, t.sample(b).to_vec())?,
                });
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({ "kind": "vae", "arch": self.arch }));
        self.encoder.write_checkpoint("", &mut ck);
        self.decoder.write_checkpoint("", &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        let arch: VaeArch = serde_json::from_value(ck.meta["arch"].clone())
            .map_err(|e| Error::Invalid(format!("checkpoint architecture: {e}")))?;
        let mut vae = Vae::new(arch, 0)?;
        vae.encoder.read_checkpoint("", ck)?;
        vae.decoder.read_checkpoint("", ck)?;
        Ok(vae)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Vae::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl HasParams for Vae {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

/// Overwrite every parameter's gradient with `grads` (in [`HasParams`] order).
pub fn set_grads<M: HasParams + ?Sized>(model: &mut M, grads: &[Vec<f64>]) -> Result<()> {
    let mut ps = model.params_mut();
    if ps.len() != grads.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), ps.len())));
    }
    for (p, g) in ps.iter_mut().zip(grads) {
        p.zero_grad();
        p.accumulate(g)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            lr: 1e-3,
            batch: 128,
            epochs: 50,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || !(self.kl_weight >= 0.0) {
            return Err(Error::Config(format!(
                "VAE training needs lr > 0, batch >= 1 and kl_weight >= 0 (got {}, {}, {})",
                self.lr, self.batch, self.kl_weight
            )));
        }
        Ok(())
    }
}

/// Per-window means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Train in place with Adam on shuffled mini-batches. Returns the per-epoch
/// loss history.
pub fn train_vae(vae: &mut Vae, windows: &[Matrix], cfg: &VaeTrainConfig) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Invalid("cannot train on an empty window set".into()));
    }
    let mut rng = rng_from(cfg.seed, stream::VAE_TRAIN, 0);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let l = vae.arch.latent_dim;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sr, mut sk, mut st) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch).enumerate() {
            let refs: Vec<&Matrix> = idx.iter().map(|&i| &windows[i]).collect();
            let x = windows_to_tensor(&refs)?;
            let eps: Vec<f64> = (0..idx.len() * l).map(|_| rng.sample(StandardNormal)).collect();
            let (parts, grads) = vae
                .loss_and_grads(&x, &eps, cfg.kl_weight, Mode::Train)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}, batch {bi}: {e}")))?;
            set_grads(vae, &grads)?;
            let mut ps = vae.params_mut();
            opt.step(&mut ps)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}, batch {bi}: {e}")))?;
            let n = idx.len() as f64;
            sr += parts.recon * n;
            sk += parts.kl * n;
            st += parts.total * n;
        }
        let n = windows.len() as f64;
        let rec = EpochLoss {
            epoch,
            recon: sr / n,
            kl: sk / n,
            total: st / n,
        };
        log::debug!("vae epoch {epoch}: total {:.6} recon {:.6} kl {:.6}", rec.total, rec.recon, rec.kl);
        history.push(rec);
    }
    Ok(history)
}

#[cfg(test)]
pub(crate) mod tests;
