use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkern::param::{HasParams, Param};
use crate::numkern::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalisation over the batch and length axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved forward state needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mode: Mode,
    pub x_hat: Tensor3,
    pub inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm1d {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), &[channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn check(&self, x: &Tensor3) -> Result<()> {
        if x.channels != self.channels {
            return Err(Error::Shape(format!(
                "{}: expected {} channels, got {}",
                self.gamma.name, self.channels, x.channels
            )));
        }
        Ok(())
    }

    /// Training-mode forward: normalises with batch statistics and updates
    /// the running estimates.
    pub fn forward_train(&mut self, x: &Tensor3) -> Result<(Tensor3, BnCache)> {
        self.check(x)?;
        let (b_n, c_n, l) = x.shape();
        let n = b_n * l;
        if n < 2 {
            return Err(Error::Shape(format!(
                "{}: training mode needs at least 2 values per channel, got {n}",
                self.gamma.name
            )));
        }
        let mut y = Tensor3::zeros(b_n, c_n, l);
        let mut x_hat = Tensor3::zeros(b_n, c_n, l);
        let mut inv_std = vec![0.0; c_n];
        for c in 0..c_n {
            let mut sum = 0.0;
            for b in 0..b_n {
                let s = x.idx(b, c, 0);
                sum += x.data[s..s + l].iter().sum::<f64>();
            }
            let mean = sum / n as f64;
            let mut ss = 0.0;
            for b in 0..b_n {
                let s = x.idx(b, c, 0);
                ss += x.data[s..s + l].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            let var = ss / n as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = is;
            let (g, be) = (self.gamma.value[c], self.beta.value[c]);
            for b in 0..b_n {
                let s = x.idx(b, c, 0);
                for t in s..s + l {
                    let h = (x.data[t] - mean) * is;
                    x_hat.data[t] = h;
                    y.data[t] = g * h + be;
                }
            }
            let m = self.momentum;
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean;
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * ss / (n - 1) as f64;
        }
        Ok((
            y,
            BnCache {
                mode: Mode::Train,
                x_hat,
                inv_std,
            },
        ))
    }

    /// Eval-mode forward: a fixed per-channel affine map.
    pub fn forward_eval(&self, x: &Tensor3) -> Result<(Tensor3, BnCache)> {
        self.check(x)?;
        let (b_n, c_n, l) = x.shape();
        let mut y = Tensor3::zeros(b_n, c_n, l);
        let mut x_hat = Tensor3::zeros(b_n, c_n, l);
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        for b in 0..b_n {
            for c in 0..c_n {
                let (g, be, mu, is) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c], inv_std[c]);
                let s = x.idx(b, c, 0);
                for t in s..s + l {
                    let h = (x.data[t] - mu) * is;
                    x_hat.data[t] = h;
                    y.data[t] = g * h + be;
                }
            }
        }
        Ok((
            y,
            BnCache {
                mode: Mode::Eval,
                x_hat,
                inv_std,
            },
        ))
    }

    pub fn forward(&mut self, x: &Tensor3, mode: Mode) -> Result<(Tensor3, BnCache)> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Returns `(grad_x, grad_gamma, grad_beta)`.
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor3) -> Result<(Tensor3, Vec<f64>, Vec<f64>)> {
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::Shape(format!(
                "{}: upstream gradient {:?}, expected {:?}",
                self.gamma.name,
                grad_out.shape(),
                cache.x_hat.shape()
            )));
        }
        let (b_n, c_n, l) = grad_out.shape();
        let n = (b_n * l) as f64;
        let mut gx = Tensor3::zeros(b_n, c_n, l);
        let mut gg = vec![0.0; c_n];
        let mut gb = vec![0.0; c_n];
        for c in 0..c_n {
            let (mut sdy, mut sdyx) = (0.0, 0.0);
            for b in 0..b_n {
                let s = grad_out.idx(b, c, 0);
                for t in s..s + l {
                    sdy += grad_out.data[t];
                    sdyx += grad_out.data[t] * cache.x_hat.data[t];
                }
            }
            gg[c] = sdyx;
            gb[c] = sdy;
            let scale = self.gamma.value[c] * cache.inv_std[c];
            for b in 0..b_n {
                let s = grad_out.idx(b, c, 0);
                for t in s..s + l {
                    gx.data[t] = match cache.mode {
                        Mode::Train => scale * (grad_out.data[t] - sdy / n - cache.x_hat.data[t] * sdyx / n),
                        Mode::Eval => scale * grad_out.data[t],
                    };
                }
            }
        }
        Ok((gx, gg, gb))
    }
}

impl HasParams for BatchNorm1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalises_to_zero() {
        let mut bn = BatchNorm1d::new("bn", 2);
        let x = Tensor3::from_vec(2, 2, 3, vec![4.0; 12]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn train_mode_needs_two_values() {
        let mut bn = BatchNorm1d::new("bn", 1);
        let x = Tensor3::from_vec(1, 1, 1, vec![1.0]).unwrap();
        assert!(bn.forward_train(&x).is_err());
        assert!(bn.forward_eval(&x).is_ok());
    }

    #[test]
    fn eval_mode_has_no_batch_coupling() {
        let mut bn = BatchNorm1d::new("bn", 1);
        bn.running_mean = vec![0.5];
        bn.running_var = vec![2.0];
        bn.gamma.value = vec![1.5];
        bn.beta.value = vec![-0.25];
        let a = Tensor3::from_vec(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let ab = Tensor3::from_vec(2, 1, 2, vec![1.0, 2.0, 100.0, -3.0]).unwrap();
        let (ya, _) = bn.forward_eval(&a).unwrap();
        let (yab, _) = bn.forward_eval(&ab).unwrap();
        assert_eq!(&ya.data[..], &yab.data[..2]);
        let is = 1.0 / (2.0f64 + 1e-5).sqrt();
        assert!((ya.data[0] - (1.5 * (1.0 - 0.5) * is - 0.25)).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn eval_mode_is_a_per_element_affine_map(
            x in proptest::collection::vec(-10f64..10.0, 12),
            other in proptest::collection::vec(-1e3f64..1e3, 12),
            gamma in -3f64..3.0,
            beta in -3f64..3.0,
            mean in -2f64..2.0,
            var in 0.1f64..4.0,
        ) {
            let mut bn = BatchNorm1d::new("bn", 2);
            bn.gamma.value = vec![gamma, 1.0];
            bn.beta.value = vec![beta, 0.0];
            bn.running_mean = vec![mean, 0.0];
            bn.running_var = vec![var, 1.0];
            let before = (bn.running_mean.clone(), bn.running_var.clone());
            let single = Tensor3::from_vec(1, 2, 6, x.clone()).unwrap();
            let pair = Tensor3::from_vec(2, 2, 6, [x.clone(), other].concat()).unwrap();
            let (ys, _) = bn.forward_eval(&single).unwrap();
            let (yp, _) = bn.forward_eval(&pair).unwrap();
            proptest::prop_assert_eq!(&ys.data[..], &yp.data[..12]);
            let a = gamma / (var + bn.eps).sqrt();
            for i in 0..6 {
                proptest::prop_assert!((ys.data[i] - (a * (x[i] - mean) + beta)).abs() < 1e-12 * (1.0 + ys.data[i].abs()));
            }
            proptest::prop_assert_eq!(before, (bn.running_mean.clone(), bn.running_var.clone()));
        }
    }
}
