//! Neural style transfer on trajectory windows.
//!
//! A generated window starts at the content window and is moved by Adam to
//! minimise `w_c·L_c + w_s·L_s`, where `L_c` compares encoder features with
//! the content window's and `L_s` compares Gram matrices with the (mean
//! aligned) style window's. The encoder is frozen in eval mode.

mod dataset;

pub use dataset::{build_adapted_dataset, expert_labels, load_adapted, save_adapted, AdaptedDataset, AdaptedRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkern::gemm::gemm;
use crate::numkern::{Adam, AdamConfig, Tensor3};
use crate::par::{self, Exec};
use crate::vae::{tensor_to_window, windows_to_tensor, FeatureStack, TrunkCache, Vae, CONTENT_LAYER, STYLE_LAYERS};

/// `G = F·Fᵀ` for a `C × M` feature matrix.
pub fn gram(f: &Matrix) -> Matrix {
    let (c, m) = (f.rows, f.cols);
    let mut g = Matrix::zeros(c, c);
    gemm(false, true, c, m, c, 1.0, &f.data, &f.data, 0.0, &mut g.data);
    g
}

fn paired<'a>(a: &'a FeatureStack, b: &'a FeatureStack) -> Result<Vec<(usize, &'a Matrix, &'a Matrix)>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("feature stacks have {} and {} layers", a.len(), b.len())));
    }
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| {
            if x.layer != y.layer || !x.data.same_shape(&y.data) {
                Err(Error::Shape(format!(
                    "layer {} ({}×{}) vs layer {} ({}×{})",
                    x.layer, x.data.rows, x.data.cols, y.layer, y.data.rows, y.data.cols
                )))
            } else {
                Ok((x.layer, &x.data, &y.data))
            }
        })
        .collect()
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ_l (1 / 2N_l) Σ_ij (F^c − F^g)²` with `N_l` the channel count.
pub fn content_loss(fc: &FeatureStack, fg: &FeatureStack) -> Result<f64> {
    Ok(paired(fc, fg)?
        .into_iter()
        .map(|(_, c, g)| sq_diff(&c.data, &g.data) / (2.0 * c.rows as f64))
        .sum())
}

fn style_term(gs: &Matrix, gg: &Matrix, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    sq_diff(&gs.data, &gg.data) / (4.0 * n * n * m * m)
}

/// `Σ_l (1 / 4N_l²M_l²) Σ_ij (G^s − G^g)²`.
pub fn style_loss(fs: &FeatureStack, fg: &FeatureStack) -> Result<f64> {
    Ok(paired(fs, fg)?
        .into_iter()
        .map(|(_, s, g)| style_term(&gram(s), &gram(g), s.rows, s.cols))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub content_weight: f64,
    pub style_weight: f64,
    pub lr: f64,
    pub iterations: usize,
    pub content_layers: Vec<usize>,
    pub style_layers: Vec<usize>,
    /// Keep the per-iteration loss history.
    pub record_history: bool,
    /// Stop a window once its relative loss change drops below this.
    pub early_stop: Option<f64>,
    /// RMSE between generated and content window above which a transfer is
    /// reported as diverged from its content.
    pub max_content_rmse: f64,
    /// Windows optimised together in one batched forward/backward.
    pub batch: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig::from_ratio(0.02)
    }
}

impl TransferConfig {
    /// `w_c / w_s = ratio` with `w_s = 1`.
    pub fn from_ratio(ratio: f64) -> Self {
        TransferConfig {
            content_weight: ratio,
            style_weight: 1.0,
            lr: 0.01,
            iterations: 1000,
            content_layers: vec![CONTENT_LAYER],
            style_layers: STYLE_LAYERS.to_vec(),
            record_history: false,
            early_stop: None,
            max_content_rmse: 1.0,
            batch: 16,
        }
    }

    /// `w_s = 0`: transfer returns the content window unchanged.
    pub fn identity() -> Self {
        TransferConfig {
            style_weight: 0.0,
            ..TransferConfig::default()
        }
    }

    pub fn ratio(&self) -> f64 {
        self.content_weight / self.style_weight
    }

    pub fn validate(&self, vae: &Vae) -> Result<()> {
        if !(self.content_weight > 0.0) || !(self.style_weight >= 0.0) {
            return Err(Error::Config(format!(
                "content weight must be > 0 and style weight >= 0 (got {}, {})",
                self.content_weight, self.style_weight
            )));
        }
        if !(self.lr > 0.0) || self.iterations == 0 || self.batch == 0 {
            return Err(Error::Config("transfer lr, iterations and batch must be positive".into()));
        }
        let flat = vae.encoder.spec.flatten_index();
        for &l in self.content_layers.iter().chain(&self.style_layers) {
            if l >= flat {
                return Err(Error::Config(format!("transfer layer {l} is not a convolutional block output (< {flat})")));
            }
        }
        Ok(())
    }
}

/// Unweighted losses at one iterate; `total` is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferLoss {
    pub iteration: usize,
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub generated: Matrix,
    pub initial: TransferLoss,
    pub last: TransferLoss,
    /// One entry per iterate including the initial and final ones, when
    /// recorded.
    pub history: Vec<TransferLoss>,
    pub content_rmse: f64,
    pub diverged: bool,
}

struct Targets {
    /// Per window, per content layer.
    content: Vec<Vec<Matrix>>,
    /// Per window, per style layer.
    style: Vec<Vec<Matrix>>,
}

fn layer_slice(t: &Tensor3, b: usize) -> Matrix {
    Matrix::from_vec(t.channels, t.length, t.sample(b).to_vec()).expect("tensor sample shape")
}

/// Losses of every window at `x` and, optionally, the gradients at each
/// involved layer output.
fn evaluate(
    cache: &TrunkCache,
    targets: &Targets,
    cfg: &TransferConfig,
    want_grads: bool,
) -> (Vec<(f64, f64)>, Vec<(usize, Tensor3)>) {
    let b = cache.batch();
    let mut losses = vec![(0.0, 0.0); b];
    let mut grads: Vec<(usize, Tensor3)> = Vec::new();
    fn grad_at(grads: &mut Vec<(usize, Tensor3)>, layer: usize, like: &Tensor3) -> usize {
        match grads.iter().position(|(l, _)| *l == layer) {
            Some(k) => k,
            None => {
                grads.push((layer, Tensor3::zeros(like.batch, like.channels, like.length)));
                grads.len() - 1
            }
        }
    }

    for (k, &layer) in cfg.content_layers.iter().enumerate() {
        let f = cache.layer_ref(layer).expect("forward reached layer");
        let n = f.channels as f64;
        let slot = if want_grads { Some(grad_at(&mut grads, layer, f)) } else { None };
        for i in 0..b {
            let g = f.sample(i);
            let c = &targets.content[i][k].data;
            losses[i].0 += sq_diff(c, g) / (2.0 * n);
            if let Some(s) = slot {
                let out = grads[s].1.sample_mut(i);
                for j in 0..g.len() {
                    out[j] += cfg.content_weight * (g[j] - c[j]) / n;
                }
            }
        }
    }

    for (k, &layer) in cfg.style_layers.iter().enumerate() {
        let f = cache.layer_ref(layer).expect("forward reached layer");
        let (n, m) = (f.channels, f.length);
        let slot = if want_grads && cfg.style_weight > 0.0 { Some(grad_at(&mut grads, layer, f)) } else { None };
        for i in 0..b {
            let fg = layer_slice(f, i);
            let gg = gram(&fg);
            let gs = &targets.style[i][k];
            losses[i].1 += style_term(gs, &gg, n, m);
            if let Some(s) = slot {
                let mut d = gg;
                for (dv, sv) in d.data.iter_mut().zip(&gs.data) {
                    *dv -= sv;
                }
                let scale = cfg.style_weight / ((n * n) as f64 * (m * m) as f64);
                let out = grads[s].1.sample_mut(i);
                gemm(false, false, n, n, m, scale, &d.data, &fg.data, 1.0, out);
            }
        }
    }
    (losses, grads)
}

fn forward(vae: &Vae, x: &Tensor3, cfg: &TransferConfig) -> Result<TrunkCache> {
    let upto = cfg.content_layers.iter().chain(&cfg.style_layers).copied().max();
    vae.encoder.forward_eval(x, upto)
}

fn input_grad(vae: &Vae, cache: &TrunkCache, grads: &[(usize, Tensor3)]) -> Result<Tensor3> {
    let refs: Vec<(usize, &Tensor3)> = grads.iter().map(|(l, t)| (*l, t)).collect();
    Ok(vae.encoder.backward(cache, None, &refs, false, true)?.input.expect("requested"))
}

fn to_loss(iteration: usize, (c, s): (f64, f64), cfg: &TransferConfig) -> TransferLoss {
    TransferLoss {
        iteration,
        total: cfg.content_weight * c + cfg.style_weight * s,
        content: c,
        style: s,
    }
}

fn rmse(a: &Matrix, b: &Matrix) -> f64 {
    (sq_diff(&a.data, &b.data) / a.data.len().max(1) as f64).sqrt()
}

/// Transfer a batch of (content, aligned style) pairs together. Each window
/// has its own Adam state, so results do not depend on the batch grouping.
pub fn transfer_batch(contents: &[&Matrix], styles: &[&Matrix], vae: &Vae, cfg: &TransferConfig) -> Result<Vec<TransferOutcome>> {
    cfg.validate(vae)?;
    if contents.len() != styles.len() {
        return Err(Error::Shape(format!("{} content windows, {} style windows", contents.len(), styles.len())));
    }
    if contents.is_empty() {
        return Ok(Vec::new());
    }
    let b = contents.len();
    let fc = vae.extract_features(contents, &cfg.content_layers)?;
    let fs = vae.extract_features(styles, &cfg.style_layers)?;
    let pick = |stack: &FeatureStack, layers: &[usize], f: &dyn Fn(&Matrix) -> Matrix| -> Vec<Matrix> {
        layers.iter().map(|&l| f(stack.get(l).expect("extracted"))).collect()
    };
    let targets = Targets {
        content: fc.iter().map(|s| pick(s, &cfg.content_layers, &|m| m.clone())).collect(),
        style: fs.iter().map(|s| pick(s, &cfg.style_layers, &gram)).collect(),
    };

    let mut x = windows_to_tensor(contents)?;
    let train = cfg.style_weight > 0.0;
    let mut cache = forward(vae, &x, cfg)?;
    let (init, mut grads) = evaluate(&cache, &targets, cfg, train);
    let initial: Vec<TransferLoss> = init.iter().map(|&l| to_loss(0, l, cfg)).collect();
    let mut history: Vec<Vec<TransferLoss>> = initial.iter().map(|&l| if cfg.record_history { vec![l] } else { Vec::new() }).collect();
    let mut last = initial.clone();

    // Content gradient vanishes at the initial point, so without a style
    // term nothing moves.
    if train {
        let mut opts: Vec<Adam> = (0..b).map(|_| Adam::new(AdamConfig::with_lr(cfg.lr))).collect();
        let mut active = vec![true; b];
        for it in 1..=cfg.iterations {
            if !active.iter().any(|&a| a) {
                break;
            }
            let gx = input_grad(vae, &cache, &grads)?;
            for i in (0..b).filter(|&i| active[i]) {
                opts[i]
                    .step_slices(&mut [x.sample_mut(i)], &[gx.sample(i)], &["window"])
                    .map_err(|e| Error::Divergence(format!("style transfer iteration {it}, window {i}: {e}")))?;
            }
            cache = forward(vae, &x, cfg)?;
            let (now, g) = evaluate(&cache, &targets, cfg, it < cfg.iterations);
            grads = g;
            for i in 0..b {
                if !active[i] {
                    continue;
                }
                let l = to_loss(it, now[i], cfg);
                if !l.total.is_finite() {
                    return Err(Error::Divergence(format!("style transfer iteration {it}, window {i}: loss {}", l.total)));
                }
                if let Some(tol) = cfg.early_stop {
                    let prev = last[i].total;
                    if (prev - l.total).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE) {
                        active[i] = false;
                    }
                }
                if cfg.record_history {
                    history[i].push(l);
                }
                last[i] = l;
            }
        }
    }

    Ok((0..b)
        .map(|i| {
            let generated = tensor_to_window(&x, i);
            let content_rmse = rmse(&generated, contents[i]);
            TransferOutcome {
                generated,
                initial: initial[i],
                last: last[i],
                history: std::mem::take(&mut history[i]),
                content_rmse,
                diverged: content_rmse > cfg.max_content_rmse,
            }
        })
        .collect())
}

/// Single-pair transfer; `style` must already be mean aligned to `content`.
pub fn transfer(content: &Matrix, style: &Matrix, vae: &Vae, cfg: &TransferConfig) -> Result<TransferOutcome> {
    Ok(transfer_batch(&[content], &[style], vae, cfg)?.remove(0))
}

/// Transfer many pairs in batches of `cfg.batch`, batches run under `exec`.
pub fn transfer_many(contents: &[&Matrix], styles: &[&Matrix], vae: &Vae, cfg: &TransferConfig, exec: Exec) -> Result<Vec<TransferOutcome>> {
    if contents.len() != styles.len() {
        return Err(Error::Shape(format!("{} content windows, {} style windows", contents.len(), styles.len())));
    }
    let starts: Vec<usize> = (0..contents.len()).step_by(cfg.batch.max(1)).collect();
    let parts = par::map(exec, &starts, |_, &s| {
        let e = (s + cfg.batch).min(contents.len());
        transfer_batch(&contents[s..e], &styles[s..e], vae, cfg)
    });
    let mut out = Vec::with_capacity(contents.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Weighted objective and its gradient with respect to the window, for
/// gradient checking.
pub fn objective_and_grad(content: &Matrix, style: &Matrix, generated: &Matrix, vae: &Vae, cfg: &TransferConfig) -> Result<(f64, Matrix)> {
    cfg.validate(vae)?;
    let fc = vae.extract_features(&[content], &cfg.content_layers)?;
    let fs = vae.extract_features(&[style], &cfg.style_layers)?;
    let targets = Targets {
        content: vec![cfg.content_layers.iter().map(|&l| fc[0].get(l).expect("extracted").clone()).collect()],
        style: vec![cfg.style_layers.iter().map(|&l| gram(fs[0].get(l).expect("extracted"))).collect()],
    };
    let x = windows_to_tensor(&[generated])?;
    let cache = forward(vae, &x, cfg)?;
    let (losses, grads) = evaluate(&cache, &targets, cfg, true);
    let gx = input_grad(vae, &cache, &grads)?;
    Ok((to_loss(0, losses[0], cfg).total, tensor_to_window(&gx, 0)))
}

/// One row of the content/style trade-off table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    /// Batch mean of the final unweighted content loss.
    pub mean_content: f64,
    /// Batch mean of the final unweighted style loss.
    pub mean_style: f64,
    /// Batch mean of final over initial style loss.
    pub mean_style_fraction: f64,
}

pub const DEFAULT_SWEEP: [f64; 5] = [0.002, 0.005, 0.02, 0.1, 0.5];

/// Run the transfer at each ratio over the same batch of pairs.
pub fn weight_sweep(
    contents: &[&Matrix],
    styles: &[&Matrix],
    vae: &Vae,
    base: &TransferConfig,
    ratios: &[f64],
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    if contents.is_empty() || contents.len() != styles.len() {
        return Err(Error::Invalid(format!(
            "weight sweep needs equal nonempty batches (got {} and {})",
            contents.len(),
            styles.len()
        )));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let cfg = TransferConfig {
            content_weight: r,
            style_weight: 1.0,
            record_history: false,
            ..base.clone()
        };
        let out = transfer_many(contents, styles, vae, &cfg, exec)?;
        let n = out.len() as f64;
        rows.push(SweepRow {
            ratio: r,
            mean_content: out.iter().map(|o| o.last.content).sum::<f64>() / n,
            mean_style: out.iter().map(|o| o.last.style).sum::<f64>() / n,
            mean_style_fraction: out
                .iter()
                .map(|o| if o.initial.style > 0.0 { o.last.style / o.initial.style } else { 0.0 })
                .sum::<f64>()
                / n,
        });
    }
    Ok(rows)
}

/// Whether content loss is nonincreasing and style loss nondecreasing as the
/// ratio grows.
pub fn sweep_trend(rows: &[SweepRow]) -> (bool, bool) {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let content = sorted.windows(2).all(|w| w[1].mean_content <= w[0].mean_content);
    let style = sorted.windows(2).all(|w| w[1].mean_style >= w[0].mean_style);
    (content, style)
}

pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from("ratio,mean_content,mean_style,mean_style_fraction\n");
    for r in rows {
        s.push_str(&format!("{},{:.10e},{:.10e},{:.10e}\n", r.ratio, r.mean_content, r.mean_style, r.mean_style_fraction));
    }
    crate::io::write_text(path, &s)
}
