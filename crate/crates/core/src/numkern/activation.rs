use crate::numkern::tensor::Tensor3;

/// Slope used for every hidden activation in the encoder, decoder and policy.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor3, slope: f64) -> Tensor3 {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    y
}

/// Backward pass given the forward *input*.
pub fn leaky_relu_backward(x: &Tensor3, grad_out: &Tensor3, slope: f64) -> Tensor3 {
    let mut g = grad_out.clone();
    g.data.iter_mut().zip(&x.data).for_each(|(g, x)| {
        if *x < 0.0 {
            *g *= slope
        }
    });
    g
}

pub fn leaky_relu_slice(x: &mut [f64], slope: f64) {
    x.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
}

pub fn leaky_relu_backward_slice(x: &[f64], grad: &mut [f64], slope: f64) {
    grad.iter_mut().zip(x).for_each(|(g, x)| {
        if *x < 0.0 {
            *g *= slope
        }
    });
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
