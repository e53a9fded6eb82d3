use crate::error::{Error, Result};
use crate::numkern::gemm::gemm;
use crate::numkern::param::{HasParams, Param};
use crate::rng::Rng;

/// Fully connected layer, `y = x Wᵀ + b` with `W` of shape `out × in`.
/// Inputs and outputs are row-major `batch × features` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

pub struct LinearGrads {
    pub grad_x: Option<Vec<f64>>,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

impl Linear {
    pub fn kaiming(name: &str, in_f: usize, out_f: usize, slope: f64, rng: &mut Rng) -> Self {
        Linear {
            in_features: in_f,
            out_features: out_f,
            weight: Param::kaiming_uniform(format!("{name}.weight"), &[out_f, in_f], in_f, slope, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_f]),
        }
    }

    fn batch_of(&self, x: &[f64]) -> Result<usize> {
        if self.in_features == 0 || x.len() % self.in_features != 0 {
            return Err(Error::Shape(format!(
                "{}: input of {} values is not a multiple of {}",
                self.weight.name,
                x.len(),
                self.in_features
            )));
        }
        Ok(x.len() / self.in_features)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let b = self.batch_of(x)?;
        let mut y = vec![0.0; b * self.out_features];
        gemm(false, true, b, self.in_features, self.out_features, 1.0, x, &self.weight.value, 0.0, &mut y);
        for row in y.chunks_mut(self.out_features) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, bias)| *v += bias);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &[f64], grad_out: &[f64], need_input_grad: bool) -> Result<LinearGrads> {
        let b = self.batch_of(x)?;
        if grad_out.len() != b * self.out_features {
            return Err(Error::Shape(format!(
                "{}: upstream gradient has {} values, expected {}",
                self.weight.name,
                grad_out.len(),
                b * self.out_features
            )));
        }
        let mut grad_w = vec![0.0; self.out_features * self.in_features];
        gemm(true, false, self.out_features, b, self.in_features, 1.0, grad_out, x, 0.0, &mut grad_w);
        let mut grad_b = vec![0.0; self.out_features];
        for row in grad_out.chunks(self.out_features) {
            grad_b.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        let grad_x = if need_input_grad {
            let mut gx = vec![0.0; b * self.in_features];
            gemm(false, false, b, self.out_features, self.in_features, 1.0, grad_out, &self.weight.value, 0.0, &mut gx);
            Some(gx)
        } else {
            None
        };
        Ok(LinearGrads { grad_x, grad_w, grad_b })
    }
}

impl HasParams for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
