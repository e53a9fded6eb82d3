//! Strided 1-D convolution and its transpose, lowered to GEMM via im2col.

use crate::error::{Error, Result};
use crate::numkern::gemm::gemm;
use crate::numkern::param::{HasParams, Param};
use crate::numkern::tensor::Tensor3;
use crate::rng::Rng;

/// `floor((l_in + 2p - k) / s) + 1`, or an error when it would be < 1.
pub fn conv_out_len(l_in: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if k == 0 || s == 0 {
        return Err(Error::Shape("kernel size and stride must be >= 1".into()));
    }
    let padded = l_in + 2 * p;
    if padded < k {
        return Err(Error::Shape(format!(
            "input length {l_in} with padding {p} is shorter than kernel {k}"
        )));
    }
    Ok((padded - k) / s + 1)
}

/// `(l_in - 1) s - 2p + k + output_padding`.
pub fn conv_transpose_out_len(l_in: usize, k: usize, s: usize, p: usize, out_pad: usize) -> Result<usize> {
    let full = (l_in.saturating_sub(1)) * s + k + out_pad;
    if l_in == 0 || full <= 2 * p {
        return Err(Error::Shape(format!(
            "transposed conv output would be empty for length {l_in}"
        )));
    }
    Ok(full - 2 * p)
}

/// Gather `x` into a `(c·k) × (b·l_out)` column matrix.
fn im2col(x: &Tensor3, k: usize, s: usize, p: usize, l_out: usize) -> Vec<f64> {
    let (b_n, c_n, l_in) = x.shape();
    let ncols = b_n * l_out;
    let mut cols = vec![0.0; c_n * k * ncols];
    for c in 0..c_n {
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * ncols..(c * k + kk + 1) * ncols];
            for b in 0..b_n {
                let src = &x.data[(b * c_n + c) * l_in..(b * c_n + c + 1) * l_in];
                let dst = &mut row[b * l_out..(b + 1) * l_out];
                for (t, d) in dst.iter_mut().enumerate() {
                    let pos = (t * s + kk) as isize - p as isize;
                    if pos >= 0 && (pos as usize) < l_in {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a column matrix back into a `(b, c, l)` tensor (adjoint of im2col).
fn col2im(cols: &[f64], b_n: usize, c_n: usize, l: usize, k: usize, s: usize, p: usize, l_cols: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(b_n, c_n, l);
    let ncols = b_n * l_cols;
    for c in 0..c_n {
        for kk in 0..k {
            let row = &cols[(c * k + kk) * ncols..(c * k + kk + 1) * ncols];
            for b in 0..b_n {
                let dst = &mut out.data[(b * c_n + c) * l..(b * c_n + c + 1) * l];
                let src = &row[b * l_cols..(b + 1) * l_cols];
                for (t, v) in src.iter().enumerate() {
                    let pos = (t * s + kk) as isize - p as isize;
                    if pos >= 0 && (pos as usize) < l {
                        dst[pos as usize] += v;
                    }
                }
            }
        }
    }
    out
}

/// `(b, c, l)` tensor → `c × (b·l)` matrix.
fn to_channel_major(x: &Tensor3) -> Vec<f64> {
    let (b_n, c_n, l) = x.shape();
    let mut m = vec![0.0; x.data.len()];
    for b in 0..b_n {
        for c in 0..c_n {
            m[c * b_n * l + b * l..c * b_n * l + (b + 1) * l]
                .copy_from_slice(&x.data[(b * c_n + c) * l..(b * c_n + c + 1) * l]);
        }
    }
    m
}

/// `c × (b·l)` matrix → `(b, c, l)` tensor.
fn from_channel_major(m: &[f64], b_n: usize, c_n: usize, l: usize) -> Tensor3 {
    let mut x = Tensor3::zeros(b_n, c_n, l);
    for b in 0..b_n {
        for c in 0..c_n {
            x.data[(b * c_n + c) * l..(b * c_n + c + 1) * l]
                .copy_from_slice(&m[c * b_n * l + b * l..c * b_n * l + (b + 1) * l]);
        }
    }
    x
}

/// Gradients produced by a convolution backward pass.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub grad_x: Option<Tensor3>,
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Cross-correlation with zero padding; weights are `out × in × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv1d {
    pub fn zeros(name: &str, in_ch: usize, out_ch: usize, k: usize, s: usize, p: usize) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || k == 0 || s == 0 {
            return Err(Error::Shape(format!(
                "invalid conv '{name}': in={in_ch} out={out_ch} k={k} s={s}"
            )));
        }
        Ok(Conv1d {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel_size: k,
            stride: s,
            padding: p,
            weight: Param::zeros(format!("{name}.weight"), &[out_ch, in_ch, k]),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn kaiming(name: &str, in_ch: usize, out_ch: usize, k: usize, s: usize, p: usize, slope: f64, rng: &mut Rng) -> Result<Self> {
        let mut c = Conv1d::zeros(name, in_ch, out_ch, k, s, p)?;
        c.weight = Param::kaiming_uniform(format!("{name}.weight"), &[out_ch, in_ch, k], in_ch * k, slope, rng);
        Ok(c)
    }

    pub fn out_len(&self, l_in: usize) -> Result<usize> {
        conv_out_len(l_in, self.kernel_size, self.stride, self.padding)
    }

    fn check_input(&self, x: &Tensor3) -> Result<usize> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name, self.in_channels, x.channels
            )));
        }
        self.out_len(x.length)
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let l_out = self.check_input(x)?;
        let (b_n, k) = (x.batch, self.in_channels * self.kernel_size);
        let cols = im2col(x, self.kernel_size, self.stride, self.padding, l_out);
        let n = b_n * l_out;
        let mut out = vec![0.0; self.out_channels * n];
        gemm(false, false, self.out_channels, k, n, 1.0, &self.weight.value, &cols, 0.0, &mut out);
        for (o, row) in out.chunks_mut(n).enumerate() {
            let bias = self.bias.value[o];
            row.iter_mut().for_each(|v| *v += bias);
        }
        Ok(from_channel_major(&out, b_n, self.out_channels, l_out))
    }

    /// Exact gradients of [`forward`](Self::forward) for the given upstream gradient.
    pub fn backward(&self, x: &Tensor3, grad_out: &Tensor3, need_input_grad: bool) -> Result<ConvGrads> {
        let l_out = self.check_input(x)?;
        if grad_out.shape() != (x.batch, self.out_channels, l_out) {
            return Err(Error::Shape(format!(
                "{}: upstream gradient {:?}, expected {:?}",
                self.weight.name,
                grad_out.shape(),
                (x.batch, self.out_channels, l_out)
            )));
        }
        let (b_n, k) = (x.batch, self.in_channels * self.kernel_size);
        let n = b_n * l_out;
        let g = to_channel_major(grad_out);
        let cols = im2col(x, self.kernel_size, self.stride, self.padding, l_out);
        let mut grad_w = vec![0.0; self.out_channels * k];
        gemm(false, true, self.out_channels, n, k, 1.0, &g, &cols, 0.0, &mut grad_w);
        let grad_b = g.chunks(n).map(|row| row.iter().sum()).collect();
        let grad_x = if need_input_grad {
            let mut gcols = vec![0.0; k * n];
            gemm(true, false, k, self.out_channels, n, 1.0, &self.weight.value, &g, 0.0, &mut gcols);
            Some(col2im(&gcols, b_n, self.in_channels, x.length, self.kernel_size, self.stride, self.padding, l_out))
        } else {
            None
        };
        Ok(ConvGrads { grad_x, grad_w, grad_b })
    }
}

impl Conv1d {
    /// Input gradient only; skips the weight and bias reductions.
    pub fn backward_input(&self, x_len: usize, grad_out: &Tensor3) -> Result<Tensor3> {
        let l_out = self.out_len(x_len)?;
        if grad_out.channels != self.out_channels || grad_out.length != l_out {
            return Err(Error::Shape(format!(
                "{}: upstream gradient {:?}, expected (_, {}, {l_out})",
                self.weight.name,
                grad_out.shape(),
                self.out_channels
            )));
        }
        let b_n = grad_out.batch;
        let k = self.in_channels * self.kernel_size;
        let n = b_n * l_out;
        let g = to_channel_major(grad_out);
        let mut gcols = vec![0.0; k * n];
        gemm(true, false, k, self.out_channels, n, 1.0, &self.weight.value, &g, 0.0, &mut gcols);
        Ok(col2im(&gcols, b_n, self.in_channels, x_len, self.kernel_size, self.stride, self.padding, l_out))
    }
}

impl HasParams for Conv1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn conv1d_forward(x: &Tensor3, layer: &Conv1d) -> Result<Tensor3> {
    layer.forward(x)
}

pub fn conv1d_backward(x: &Tensor3, layer: &Conv1d, grad_out: &Tensor3) -> Result<(Tensor3, Vec<f64>, Vec<f64>)> {
    let g = layer.backward(x, grad_out, true)?;
    Ok((g.grad_x.expect("input gradient requested"), g.grad_w, g.grad_b))
}

/// Transposed convolution (the adjoint of [`Conv1d`] in its input), weights
/// `in × out × k`. Used by the decoder to invert the encoder's length chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn kaiming(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        s: usize,
        p: usize,
        out_pad: usize,
        slope: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || k == 0 || s == 0 {
            return Err(Error::Shape(format!("invalid transposed conv '{name}'")));
        }
        Ok(ConvTranspose1d {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel_size: k,
            stride: s,
            padding: p,
            output_padding: out_pad,
            weight: Param::kaiming_uniform(format!("{name}.weight"), &[in_ch, out_ch, k], in_ch * k, slope, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
        })
    }

    pub fn out_len(&self, l_in: usize) -> Result<usize> {
        conv_transpose_out_len(l_in, self.kernel_size, self.stride, self.padding, self.output_padding)
    }

    fn check_input(&self, x: &Tensor3) -> Result<usize> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name, self.in_channels, x.channels
            )));
        }
        self.out_len(x.length)
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let l_out = self.check_input(x)?;
        let (b_n, l_in) = (x.batch, x.length);
        let ok = self.out_channels * self.kernel_size;
        let n = b_n * l_in;
        let xm = to_channel_major(x);
        let mut cols = vec![0.0; ok * n];
        gemm(true, false, ok, self.in_channels, n, 1.0, &self.weight.value, &xm, 0.0, &mut cols);
        let mut y = col2im(&cols, b_n, self.out_channels, l_out, self.kernel_size, self.stride, self.padding, l_in);
        for b in 0..b_n {
            for o in 0..self.out_channels {
                let bias = self.bias.value[o];
                let start = y.idx(b, o, 0);
                y.data[start..start + l_out].iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor3, grad_out: &Tensor3, need_input_grad: bool) -> Result<ConvGrads> {
        let l_out = self.check_input(x)?;
        if grad_out.shape() != (x.batch, self.out_channels, l_out) {
            return Err(Error::Shape(format!(
                "{}: upstream gradient {:?}, expected {:?}",
                self.weight.name,
                grad_out.shape(),
                (x.batch, self.out_channels, l_out)
            )));
        }
        let (b_n, l_in) = (x.batch, x.length);
        let ok = self.out_channels * self.kernel_size;
        let n = b_n * l_in;
        // Gathering grad_out with the forward scatter pattern is exactly im2col
        // of grad_out evaluated at l_in positions.
        let gcols = im2col(grad_out, self.kernel_size, self.stride, self.padding, l_in);
        let xm = to_channel_major(x);
        let mut grad_w = vec![0.0; self.in_channels * ok];
        gemm(false, true, self.in_channels, n, ok, 1.0, &xm, &gcols, 0.0, &mut grad_w);
        let mut grad_b = vec![0.0; self.out_channels];
        for b in 0..b_n {
            for (o, gb) in grad_b.iter_mut().enumerate() {
                let start = grad_out.idx(b, o, 0);
                *gb += grad_out.data[start..start + l_out].iter().sum::<f64>();
            }
        }
        let grad_x = if need_input_grad {
            let mut gx = vec![0.0; self.in_channels * n];
            gemm(false, false, self.in_channels, ok, n, 1.0, &self.weight.value, &gcols, 0.0, &mut gx);
            Some(from_channel_major(&gx, b_n, self.in_channels, l_in))
        } else {
            None
        };
        Ok(ConvGrads { grad_x, grad_w, grad_b })
    }
}

impl HasParams for ConvTranspose1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
