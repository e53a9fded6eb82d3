//! Strided convolutional trunk with a linear head.
//!
//! Layers are enumerated in a fixed order that feature extraction refers to:
//! for block `i` the conv, batch-norm and activation outputs are indices
//! `3i`, `3i + 1` and `3i + 2`; after the last block come `flatten` and the
//! linear head. With three blocks that gives
//!
//! ```text
//! 0 conv1  1 bn1  2 act1  3 conv2  4 bn2  5 act2  6 conv3  7 bn3  8 act3  9 flatten  10 linear
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkern::{
    conv_out_len, leaky_relu, leaky_relu_backward, BatchNorm1d, BnCache, Checkpoint, Conv1d, HasParams, Linear, Mode,
    Param, Tensor3, LEAKY_SLOPE,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkSpec {
    pub in_channels: usize,
    pub length: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_dim: usize,
}

impl TrunkSpec {
    /// Output length after each conv block.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        let mut l = self.length;
        let mut out = Vec::with_capacity(self.channels.len());
        for _ in &self.channels {
            l = conv_out_len(l, self.kernel, self.stride, self.padding)?;
            out.push(l);
        }
        Ok(out)
    }

    pub fn num_layers(&self) -> usize {
        3 * self.channels.len() + 2
    }

    pub fn flatten_index(&self) -> usize {
        3 * self.channels.len()
    }

    pub fn head_index(&self) -> usize {
        3 * self.channels.len() + 1
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let lengths = self.lengths()?;
        Ok(self.channels.last().copied().unwrap_or(self.in_channels) * lengths.last().copied().unwrap_or(self.length))
    }

    /// `(channels, length)` of the output at a layer index. Flatten and head
    /// outputs are reported as a single channel.
    pub fn layer_shape(&self, index: usize) -> Result<(usize, usize)> {
        let lengths = self.lengths()?;
        if index < self.flatten_index() {
            Ok((self.channels[index / 3], lengths[index / 3]))
        } else if index == self.flatten_index() {
            Ok((1, self.flat_dim()?))
        } else if index == self.head_index() {
            Ok((1, self.out_dim))
        } else {
            Err(Error::Invalid(format!(
                "layer index {index} out of range 0..{}",
                self.num_layers()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvTrunk {
    pub spec: TrunkSpec,
    pub convs: Vec<Conv1d>,
    pub bns: Vec<BatchNorm1d>,
    pub head: Linear,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    pub mode: Mode,
    pub input: Tensor3,
    /// Outputs of layers `0 .. 3·blocks`, in enumeration order.
    pub outputs: Vec<Tensor3>,
    pub bn_caches: Vec<BnCache>,
    /// Head output, row-major `batch × out_dim`; empty when the head was skipped.
    pub head: Vec<f64>,
}

impl TrunkCache {
    pub fn batch(&self) -> usize {
        self.input.batch
    }

    /// Output of layer `index` as a tensor (flatten and head are `B × 1 × M`).
    pub fn layer(&self, index: usize) -> Result<Tensor3> {
        let nb = self.outputs.len();
        if index < nb {
            Ok(self.outputs[index].clone())
        } else if index == nb {
            let last = self.outputs.last().unwrap_or(&self.input);
            Tensor3::from_vec(last.batch, 1, last.channels * last.length, last.data.clone())
        } else if index == nb + 1 && !self.head.is_empty() {
            let b = self.batch();
            Tensor3::from_vec(b, 1, self.head.len() / b, self.head.clone())
        } else {
            Err(Error::Invalid(format!("layer index {index} not available")))
        }
    }

    pub fn layer_ref(&self, index: usize) -> Option<&Tensor3> {
        self.outputs.get(index)
    }
}

/// Gradients returned by [`ConvTrunk::backward`].
#[derive(Debug, Clone)]
pub struct TrunkGrads {
    pub input: Option<Tensor3>,
    /// Per parameter, in [`HasParams`] order.
    pub params: Option<Vec<Vec<f64>>>,
}

impl ConvTrunk {
    pub fn new(name: &str, spec: TrunkSpec, rng: &mut Rng) -> Result<Self> {
        if spec.channels.is_empty() {
            return Err(Error::Config(format!("{name}: at least one conv block is required")));
        }
        if spec.out_dim == 0 || spec.in_channels == 0 {
            return Err(Error::Config(format!("{name}: input channels and output size must be >= 1")));
        }
        spec.lengths()?;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut c_in = spec.in_channels;
        for (i, &c) in spec.channels.iter().enumerate() {
            convs.push(Conv1d::kaiming(
                &format!("{name}.conv{}", i + 1),
                c_in,
                c,
                spec.kernel,
                spec.stride,
                spec.padding,
                LEAKY_SLOPE,
                rng,
            )?);
            bns.push(BatchNorm1d::new(&format!("{name}.bn{}", i + 1), c));
            c_in = c;
        }
        let head = Linear::kaiming(&format!("{name}.head"), spec.flat_dim()?, spec.out_dim, 1.0, rng);
        Ok(ConvTrunk { spec, convs, bns, head })
    }

    /// Forward through the first `upto + 1` enumerated layers (all of them
    /// when `upto` is `None`). Train mode updates batch-norm running stats.
    pub fn forward(&mut self, x: &Tensor3, mode: Mode, upto: Option<usize>) -> Result<TrunkCache> {
        match mode {
            Mode::Train => {
                let ConvTrunk { spec, convs, bns, head } = self;
                run_layers(spec, convs, head, x, Mode::Train, upto, |i, t| bns[i].forward_train(t))
            }
            Mode::Eval => self.forward_eval(x, upto),
        }
    }

    /// Eval-mode forward; never touches running statistics.
    pub fn forward_eval(&self, x: &Tensor3, upto: Option<usize>) -> Result<TrunkCache> {
        run_layers(&self.spec, &self.convs, &self.head, x, Mode::Eval, upto, |i, t| self.bns[i].forward_eval(t))
    }

    /// Backpropagate gradients given at the head output and/or at any
    /// enumerated layer outputs. Parameter gradients are returned, not
    /// accumulated, so a shared trunk can be differentiated concurrently.
    pub fn backward(
        &self,
        cache: &TrunkCache,
        grad_head: Option<&[f64]>,
        layer_grads: &[(usize, &Tensor3)],
        want_params: bool,
        want_input: bool,
    ) -> Result<TrunkGrads> {
        let nb = self.convs.len();
        let flat = self.spec.flatten_index();
        let mut extra: Vec<Option<Tensor3>> = vec![None; flat];
        for (idx, g) in layer_grads {
            let target = if *idx == flat { flat - 1 } else { *idx };
            if *idx > flat || target >= cache.outputs.len() {
                return Err(Error::Invalid(format!("no forward output cached for layer {idx}")));
            }
            let expect = cache.outputs[target].shape();
            if g.data.len() != cache.outputs[target].data.len() {
                return Err(Error::Shape(format!("gradient for layer {idx} is {:?}, expected {expect:?}", g.shape())));
            }
            let g = Tensor3::from_vec(expect.0, expect.1, expect.2, g.data.clone())?;
            match &mut extra[target] {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }

        let mut conv_grads: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); nb];
        let mut bn_grads: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); nb];
        let mut head_grads = (vec![0.0; self.head.weight.len()], vec![0.0; self.head.bias.len()]);

        let mut g: Option<Tensor3> = None;
        if let Some(gh) = grad_head {
            if cache.head.is_empty() || cache.outputs.len() < flat {
                return Err(Error::Invalid("head gradient given but the head was not evaluated".into()));
            }
            let act = &cache.outputs[flat - 1];
            let lg = self.head.backward(&act.data, gh, true)?;
            head_grads = (lg.grad_w, lg.grad_b);
            let (b, c, l) = act.shape();
            g = Some(Tensor3::from_vec(b, c, l, lg.grad_x.expect("requested"))?);
        }

        for i in (0..nb).rev() {
            let base = 3 * i;
            if base + 2 < cache.outputs.len() {
                g = add_opt(g, extra[base + 2].take())?;
                if let Some(gr) = &g {
                    g = Some(leaky_relu_backward(&cache.outputs[base + 1], gr, LEAKY_SLOPE));
                }
            }
            if base + 1 < cache.outputs.len() {
                g = add_opt(g, extra[base + 1].take())?;
                if let Some(gr) = &g {
                    let (gx, gg, gb) = self.bns[i].backward(&cache.bn_caches[i], gr)?;
                    bn_grads[i] = (gg, gb);
                    g = Some(gx);
                }
            }
            if base < cache.outputs.len() {
                g = add_opt(g, extra[base].take())?;
                if let Some(gr) = &g {
                    let x = if i == 0 { &cache.input } else { &cache.outputs[base - 1] };
                    let need_x = i > 0 || want_input;
                    if want_params {
                        let cg = self.convs[i].backward(x, gr, need_x)?;
                        conv_grads[i] = (cg.grad_w, cg.grad_b);
                        g = cg.grad_x;
                    } else if need_x {
                        g = Some(self.convs[i].backward_input(x.length, gr)?);
                    } else {
                        g = None;
                    }
                }
            }
        }

        let params = if want_params {
            let mut out = Vec::with_capacity(4 * nb + 2);
            for i in 0..nb {
                let (w, b) = std::mem::take(&mut conv_grads[i]);
                out.push(or_zeros(w, self.convs[i].weight.len()));
                out.push(or_zeros(b, self.convs[i].bias.len()));
                let (gg, gb) = std::mem::take(&mut bn_grads[i]);
                out.push(or_zeros(gg, self.bns[i].channels));
                out.push(or_zeros(gb, self.bns[i].channels));
            }
            out.push(head_grads.0);
            out.push(head_grads.1);
            Some(out)
        } else {
            None
        };
        let input = if want_input {
            Some(g.unwrap_or_else(|| Tensor3::zeros(cache.input.batch, cache.input.channels, cache.input.length)))
        } else {
            None
        };
        Ok(TrunkGrads { input, params })
    }

    pub fn write_checkpoint(&self, prefix: &str, ck: &mut Checkpoint) {
        for p in self.params() {
            ck.push(format!("{prefix}{}", p.name), &p.shape, &p.value);
        }
        for bn in &self.bns {
            ck.push(format!("{prefix}{}.running_mean", bn.gamma.name), &[bn.channels], &bn.running_mean);
            ck.push(format!("{prefix}{}.running_var", bn.gamma.name), &[bn.channels], &bn.running_var);
        }
    }

    pub fn read_checkpoint(&mut self, prefix: &str, ck: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let name = format!("{prefix}{}", p.name);
            ck.read_into(&name, &mut p.value)?;
        }
        for bn in &mut self.bns {
            ck.read_into(&format!("{prefix}{}.running_mean", bn.gamma.name), &mut bn.running_mean)?;
            ck.read_into(&format!("{prefix}{}.running_var", bn.gamma.name), &mut bn.running_var)?;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn run_layers<F>(
    spec: &TrunkSpec,
    convs: &[Conv1d],
    head: &Linear,
    x: &Tensor3,
    mode: Mode,
    upto: Option<usize>,
    mut bn: F,
) -> Result<TrunkCache>
where
    F: FnMut(usize, &Tensor3) -> Result<(Tensor3, BnCache)>,
{
    if x.channels != spec.in_channels || x.length != spec.length {
        return Err(Error::Shape(format!(
            "trunk expects (_, {}, {}), got {:?}",
            spec.in_channels,
            spec.length,
            x.shape()
        )));
    }
    if x.batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let last = upto.unwrap_or(spec.head_index());
    let mut outputs: Vec<Tensor3> = Vec::new();
    let mut bn_caches = Vec::new();
    let mut cur = x.clone();
    for (i, conv) in convs.iter().enumerate() {
        if 3 * i > last {
            break;
        }
        outputs.push(conv.forward(&cur)?);
        if 3 * i + 1 > last {
            break;
        }
        let (b, cache) = bn(i, &outputs[3 * i])?;
        bn_caches.push(cache);
        outputs.push(b);
        if 3 * i + 2 > last {
            break;
        }
        cur = leaky_relu(&outputs[3 * i + 1], LEAKY_SLOPE);
        outputs.push(cur.clone());
    }
    let head = if last >= spec.head_index() {
        head.forward(&cur.data)?
    } else {
        Vec::new()
    };
    Ok(TrunkCache {
        mode,
        input: x.clone(),
        outputs,
        bn_caches,
        head,
    })
}

fn add_opt(a: Option<Tensor3>, b: Option<Tensor3>) -> Result<Option<Tensor3>> {
    Ok(match (a, b) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b)?;
            Some(a)
        }
        (a, None) => a,
        (None, b) => b,
    })
}

fn or_zeros(v: Vec<f64>, n: usize) -> Vec<f64> {
    if v.is_empty() {
        vec![0.0; n]
    } else {
        v
    }
}

impl HasParams for ConvTrunk {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for (c, b) in self.convs.iter().zip(&self.bns) {
            v.extend([&c.weight, &c.bias, &b.gamma, &b.beta]);
        }
        v.extend([&self.head.weight, &self.head.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
            v.push(&mut b.gamma);
            v.push(&mut b.beta);
        }
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}
