use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkern::param::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moment buffers are allocated on the first step and
/// must keep the same shapes afterwards.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        let mut values: Vec<&mut [f64]> = Vec::with_capacity(params.len());
        let mut grads: Vec<&[f64]> = Vec::with_capacity(params.len());
        let mut names: Vec<&str> = Vec::with_capacity(params.len());
        for p in params.iter_mut() {
            let Param { name, value, grad, .. } = &mut **p;
            values.push(value.as_mut_slice());
            grads.push(grad.as_slice());
            names.push(name.as_str());
        }
        self.step_slices(&mut values, &grads, &names)
    }

    /// Update raw slices; `names` are used only in error messages.
    pub fn step_slices(&mut self, values: &mut [&mut [f64]], grads: &[&[f64]], names: &[&str]) -> Result<()> {
        if values.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter arrays but {} gradients",
                values.len(),
                grads.len()
            )));
        }
        let name = |i: usize| names.get(i).copied().unwrap_or("<unnamed>");
        for (i, (v, g)) in values.iter().zip(grads).enumerate() {
            if v.len() != g.len() {
                return Err(Error::Shape(format!(
                    "parameter '{}' has {} values but gradient has {}",
                    name(i),
                    v.len(),
                    g.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of '{}'", name(i))));
            }
        }
        if self.m.is_empty() {
            self.m = values.iter().map(|v| vec![0.0; v.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != values.len() || self.m.iter().zip(values.iter()).any(|(m, v)| m.len() != v.len()) {
            return Err(Error::Shape("parameter shapes changed between Adam steps".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (val, g)) in values.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                val[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
