//! Finite-difference validation of every backward pass on small seeded
//! instances.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapt::{bc_batch_grads, PolicyArch, PolicyNet};
use crate::cutsim::N_S;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::numkern::{
    grad_check, leaky_relu, leaky_relu_backward, BatchNorm1d, Conv1d, ConvTranspose1d, HasParams, Linear, Mode, Tensor3,
    LEAKY_SLOPE,
};
use crate::rng::{rng_from, Rng};
use crate::styletx::{objective_and_grad, TransferConfig};
use crate::trajdata::NormStats;
use crate::vae::{windows_to_tensor, Vae, VaeArch};

pub const OPS: [&str; 9] = [
    "conv1d",
    "conv-transpose1d",
    "batchnorm-train",
    "batchnorm-eval",
    "linear",
    "leaky-relu",
    "elbo",
    "style-transfer",
    "bc-loss",
];

const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct OpResult {
    pub op: String,
    pub trials: usize,
    pub passed: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OpResult {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

fn normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn tensor(rng: &mut Rng, b: usize, c: usize, l: usize) -> Tensor3 {
    Tensor3::from_vec(b, c, l, normal(rng, b * c * l)).expect("sized")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Check one instance: `theta` packs every differentiated quantity and
/// `loss` rebuilds the computation from it.
fn check(theta: &[f64], analytic: &[f64], loss: impl FnMut(&[f64]) -> f64, tol: f64) -> f64 {
    grad_check(loss, theta, analytic, STEP, tol).max_rel_error
}

fn conv_instance(rng: &mut Rng, transpose: bool, tol: f64) -> Result<f64> {
    let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let (k, s, p) = (rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(0..2usize));
    let (b, l) = (rng.gen_range(1..3), rng.gen_range(4..9));
    let p = p.min(k - 1);
    let x = tensor(rng, b, cin, l);
    if transpose {
        let op = rng.gen_range(0..s);
        let mut layer = ConvTranspose1d::kaiming("t", cin, cout, k, s, p, op, LEAKY_SLOPE, rng)?;
        layer.bias.value = normal(rng, cout);
        let y = layer.forward(&x)?;
        let r = normal(rng, y.data.len());
        let g = layer.backward(&x, &Tensor3::from_vec(y.batch, y.channels, y.length, r.clone())?, true)?;
        let (nx, nw) = (x.data.len(), layer.weight.len());
        let theta = [x.data.clone(), layer.weight.value.clone(), layer.bias.value.clone()].concat();
        let analytic = [g.grad_x.expect("requested").data, g.grad_w, g.grad_b].concat();
        let mut probe = layer.clone();
        Ok(check(&theta, &analytic, |t| {
            let xi = Tensor3::from_vec(b, cin, l, t[..nx].to_vec()).expect("sized");
            probe.weight.value.copy_from_slice(&t[nx..nx + nw]);
            probe.bias.value.copy_from_slice(&t[nx + nw..]);
            dot(&probe.forward(&xi).expect("valid").data, &r)
        }, tol))
    } else {
        let mut layer = Conv1d::kaiming("c", cin, cout, k, s, p, LEAKY_SLOPE, rng)?;
        layer.bias.value = normal(rng, cout);
        let y = layer.forward(&x)?;
        let r = normal(rng, y.data.len());
        let g = layer.backward(&x, &Tensor3::from_vec(y.batch, y.channels, y.length, r.clone())?, true)?;
        let (nx, nw) = (x.data.len(), layer.weight.len());
        let theta = [x.data.clone(), layer.weight.value.clone(), layer.bias.value.clone()].concat();
        let analytic = [g.grad_x.expect("requested").data, g.grad_w, g.grad_b].concat();
        let mut probe = layer.clone();
        Ok(check(&theta, &analytic, |t| {
            let xi = Tensor3::from_vec(b, cin, l, t[..nx].to_vec()).expect("sized");
            probe.weight.value.copy_from_slice(&t[nx..nx + nw]);
            probe.bias.value.copy_from_slice(&t[nx + nw..]);
            dot(&probe.forward(&xi).expect("valid").data, &r)
        }, tol))
    }
}

fn bn_instance(rng: &mut Rng, mode: Mode, tol: f64) -> Result<f64> {
    let (b, c, l) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..7));
    let mut bn = BatchNorm1d::new("bn", c);
    bn.gamma.value = normal(rng, c).iter().map(|v| 1.0 + 0.5 * v).collect();
    bn.beta.value = normal(rng, c);
    bn.running_mean = normal(rng, c);
    bn.running_var = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    let x = tensor(rng, b, c, l);
    let (y, cache) = bn.clone().forward(&x, mode)?;
    let r = normal(rng, y.data.len());
    // The quadratic term couples every output through the batch statistics.
    let upstream: Vec<f64> = y.data.iter().zip(&r).map(|(v, ri)| ri + v).collect();
    let (gx, gg, gb) = bn.backward(&cache, &Tensor3::from_vec(b, c, l, upstream)?)?;
    let nx = x.data.len();
    let theta = [x.data.clone(), bn.gamma.value.clone(), bn.beta.value.clone()].concat();
    let analytic = [gx.data, gg, gb].concat();
    Ok(check(&theta, &analytic, |t| {
        let mut probe = bn.clone();
        let xi = Tensor3::from_vec(b, c, l, t[..nx].to_vec()).expect("sized");
        probe.gamma.value.copy_from_slice(&t[nx..nx + c]);
        probe.beta.value.copy_from_slice(&t[nx + c..]);
        let y = probe.forward(&xi, mode).expect("valid").0;
        dot(&y.data, &r) + 0.5 * dot(&y.data, &y.data)
    }, tol))
}

fn linear_instance(rng: &mut Rng, tol: f64) -> Result<f64> {
    let (b, fin, fout) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..5));
    let mut layer = Linear::kaiming("fc", fin, fout, LEAKY_SLOPE, rng);
    layer.bias.value = normal(rng, fout);
    let x = normal(rng, b * fin);
    let r = normal(rng, b * fout);
    let g = layer.backward(&x, &r, true)?;
    let (nx, nw) = (x.len(), layer.weight.len());
    let theta = [x.clone(), layer.weight.value.clone(), layer.bias.value.clone()].concat();
    let analytic = [g.grad_x.expect("requested"), g.grad_w, g.grad_b].concat();
    let mut probe = layer.clone();
    Ok(check(&theta, &analytic, |t| {
        probe.weight.value.copy_from_slice(&t[nx..nx + nw]);
        probe.bias.value.copy_from_slice(&t[nx + nw..]);
        dot(&probe.forward(&t[..nx]).expect("valid"), &r)
    }, tol))
}

fn leaky_instance(rng: &mut Rng, tol: f64) -> Result<f64> {
    let (b, c, l) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..8));
    let mut x = tensor(rng, b, c, l);
    // Keep every point away from the kink at zero.
    x.data.iter_mut().for_each(|v| {
        if v.abs() < 1e-2 {
            *v += 0.05_f64.copysign(*v);
        }
    });
    let r = normal(rng, x.data.len());
    let g = leaky_relu_backward(&x, &Tensor3::from_vec(b, c, l, r.clone())?, LEAKY_SLOPE);
    Ok(check(&x.data.clone(), &g.data, |t| {
        let xi = Tensor3::from_vec(b, c, l, t.to_vec()).expect("sized");
        dot(&leaky_relu(&xi, LEAKY_SLOPE).data, &r)
    }, tol))
}

fn tiny_vae_arch(rng: &mut Rng) -> VaeArch {
    VaeArch {
        n_s: rng.gen_range(1..3),
        window: rng.gen_range(8..14),
        latent_dim: rng.gen_range(1..4),
        channels: vec![rng.gen_range(2..4), rng.gen_range(2..5), rng.gen_range(2..5)],
        kernel: 3,
        stride: 2,
        padding: 1,
    }
}

fn random_window(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, normal(rng, rows * cols)).expect("sized")
}

fn elbo_instance(rng: &mut Rng, tol: f64) -> Result<f64> {
    let arch = tiny_vae_arch(rng);
    let mut vae = Vae::new(arch.clone(), rng.gen())?;
    let ws: Vec<Matrix> = (0..2).map(|_| random_window(rng, arch.window, arch.n_s)).collect();
    let refs: Vec<&Matrix> = ws.iter().collect();
    let x = windows_to_tensor(&refs)?;
    let eps = normal(rng, 2 * arch.latent_dim);
    let beta = rng.gen_range(0.1..2.0);
    let (_, grads) = vae.loss_and_grads(&x, &eps, beta, Mode::Train)?;
    let theta = vae.flat_values();
    let mut probe = vae.clone();
    Ok(check(&theta, &grads.concat(), |t| {
        probe.set_flat_values(t).expect("sized");
        probe.loss_and_grads(&x, &eps, beta, Mode::Train).expect("valid").0.total
    }, tol))
}

fn style_instance(rng: &mut Rng, tol: f64) -> Result<f64> {
    let arch = tiny_vae_arch(rng);
    let vae = Vae::new(arch.clone(), rng.gen())?;
    let (n, c) = (arch.window, arch.n_s);
    let content = random_window(rng, n, c);
    let style = random_window(rng, n, c);
    let mut g = content.clone();
    g.data.iter_mut().for_each(|v| *v += 0.3 * rng.gen_range(-1.0..1.0));
    let cfg = TransferConfig::from_ratio(rng.gen_range(0.01..2.0));
    let (_, grad) = objective_and_grad(&content, &style, &g, &vae, &cfg)?;
    Ok(check(&g.data.clone(), &grad.data, |t| {
        let w = Matrix::from_vec(n, c, t.to_vec()).expect("sized");
        objective_and_grad(&content, &style, &w, &vae, &cfg).expect("valid").0
    }, tol))
}

fn bc_instance(rng: &mut Rng, tol: f64) -> Result<f64> {
    let arch = PolicyArch {
        window: rng.gen_range(8..14),
        channels: vec![rng.gen_range(2..4), rng.gen_range(2..5), rng.gen_range(2..5)],
        ..PolicyArch::default()
    };
    let mut net = PolicyNet::new("p", arch.clone(), NormStats::identity(N_S), rng.gen())?;
    let b = rng.gen_range(2..4);
    let ws: Vec<Matrix> = (0..b).map(|_| random_window(rng, arch.window, N_S)).collect();
    let refs: Vec<&Matrix> = ws.iter().collect();
    let x = windows_to_tensor(&refs)?;
    let labels: Vec<f64> = (0..b * crate::cutsim::N_A).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mode = if rng.gen_bool(0.5) { Mode::Train } else { Mode::Eval };
    let (_, grads) = bc_batch_grads(&mut net, &x, &labels, mode)?;
    let theta = net.flat_values();
    let mut probe = net.clone();
    Ok(check(&theta, &grads.concat(), |t| {
        probe.set_flat_values(t).expect("sized");
        bc_batch_grads(&mut probe, &x, &labels, mode).expect("valid").0
    }, tol))
}

/// Run `trials` seeded instances of every op in [`OPS`].
pub fn run_suite(trials: usize, seed: u64, tolerance: f64) -> Result<Vec<OpResult>> {
    let mut out = Vec::with_capacity(OPS.len());
    for (k, op) in OPS.iter().enumerate() {
        let mut res = OpResult {
            op: op.to_string(),
            trials,
            passed: 0,
            max_rel_error: 0.0,
            tolerance,
        };
        for t in 0..trials {
            let mut rng = rng_from(seed, k as u64, t as u64);
            let err = match *op {
                "conv1d" => conv_instance(&mut rng, false, tolerance)?,
                "conv-transpose1d" => conv_instance(&mut rng, true, tolerance)?,
                "batchnorm-train" => bn_instance(&mut rng, Mode::Train, tolerance)?,
                "batchnorm-eval" => bn_instance(&mut rng, Mode::Eval, tolerance)?,
                "linear" => linear_instance(&mut rng, tolerance)?,
                "leaky-relu" => leaky_instance(&mut rng, tolerance)?,
                "elbo" => elbo_instance(&mut rng, tolerance)?,
                "style-transfer" => style_instance(&mut rng, tolerance)?,
                _ => bc_instance(&mut rng, tolerance)?,
            };
            if err < tolerance {
                res.passed += 1;
            } else {
                log::warn!("{op} trial {t}: relative error {err:.3e}");
            }
            res.max_rel_error = res.max_rel_error.max(err);
        }
        out.push(res);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_backward_pass_matches_finite_differences() {
        let res = run_suite(100, 2024, 1e-4).unwrap();
        for r in &res {
            assert!(r.ok(), "{r:?}");
        }
        assert_eq!(res.len(), OPS.len());
    }
}
