use crate::error::{Error, Result};
use crate::numkern::{
    leaky_relu_backward_slice, leaky_relu_slice, leaky_relu, leaky_relu_backward, BatchNorm1d, BnCache, Checkpoint,
    ConvTranspose1d, HasParams, Linear, Mode, Param, Tensor3, LEAKY_SLOPE,
};
use crate::rng::Rng;

use super::trunk::TrunkSpec;

/// Mirror of a [`TrunkSpec`] encoder: linear to the deepest feature shape,
/// then transposed convolutions whose output padding reproduces the
/// encoder's length chain exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub latent_dim: usize,
    pub start_channels: usize,
    pub start_len: usize,
    pub fc: Linear,
    pub deconvs: Vec<ConvTranspose1d>,
    pub bns: Vec<BatchNorm1d>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    pub mode: Mode,
    pub z: Vec<f64>,
    pub fc_out: Vec<f64>,
    /// Input to each transposed conv.
    pub inputs: Vec<Tensor3>,
    /// Batch-norm outputs (pre-activation) for all but the last block.
    pub bn_out: Vec<Tensor3>,
    pub bn_caches: Vec<BnCache>,
    pub output: Tensor3,
}

impl Decoder {
    pub fn new(name: &str, enc: &TrunkSpec, latent_dim: usize, rng: &mut Rng) -> Result<Self> {
        let lengths = enc.lengths()?;
        let nb = enc.channels.len();
        let start_channels = enc.channels[nb - 1];
        let start_len = lengths[nb - 1];
        let fc = Linear::kaiming(&format!("{name}.fc"), latent_dim, start_channels * start_len, 1.0, rng);
        let mut deconvs = Vec::with_capacity(nb);
        let mut bns = Vec::with_capacity(nb - 1);
        for i in 0..nb {
            let c_in = enc.channels[nb - 1 - i];
            let (c_out, l_target) = if i + 1 < nb {
                (enc.channels[nb - 2 - i], lengths[nb - 2 - i])
            } else {
                (enc.in_channels, enc.length)
            };
            let l_in = lengths[nb - 1 - i];
            let base = ((l_in - 1) * enc.stride + enc.kernel) as isize - 2 * enc.padding as isize;
            let out_pad = l_target as isize - base;
            if out_pad < 0 || out_pad as usize >= enc.stride.max(enc.padding + 1) {
                return Err(Error::Config(format!(
                    "cannot invert length {l_in} -> {l_target} with k={} s={} p={}",
                    enc.kernel, enc.stride, enc.padding
                )));
            }
            let slope = if i + 1 < nb { LEAKY_SLOPE } else { 1.0 };
            deconvs.push(ConvTranspose1d::kaiming(
                &format!("{name}.deconv{}", i + 1),
                c_in,
                c_out,
                enc.kernel,
                enc.stride,
                enc.padding,
                out_pad as usize,
                slope,
                rng,
            )?);
            if i + 1 < nb {
                bns.push(BatchNorm1d::new(&format!("{name}.bn{}", i + 1), c_out));
            }
        }
        Ok(Decoder {
            latent_dim,
            start_channels,
            start_len,
            fc,
            deconvs,
            bns,
        })
    }

    pub fn forward(&mut self, z: &[f64], mode: Mode) -> Result<DecoderCache> {
        match mode {
            Mode::Train => {
                let Decoder { bns, .. } = self;
                let mut bns = std::mem::take(bns);
                let r = self.run(z, Mode::Train, |i, t| bns[i].forward_train(t));
                self.bns = bns;
                r
            }
            Mode::Eval => self.forward_eval(z),
        }
    }

    pub fn forward_eval(&self, z: &[f64]) -> Result<DecoderCache> {
        self.run(z, Mode::Eval, |i, t| self.bns[i].forward_eval(t))
    }

    fn run<F>(&self, z: &[f64], mode: Mode, mut bn: F) -> Result<DecoderCache>
    where
        F: FnMut(usize, &Tensor3) -> Result<(Tensor3, BnCache)>,
    {
        if z.is_empty() || z.len() % self.latent_dim != 0 {
            return Err(Error::Shape(format!(
                "latent batch of {} values is not a multiple of {}",
                z.len(),
                self.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        let b = z.len() / self.latent_dim;
        let fc_out = self.fc.forward(z)?;
        let mut act = fc_out.clone();
        leaky_relu_slice(&mut act, LEAKY_SLOPE);
        let mut cur = Tensor3::from_vec(b, self.start_channels, self.start_len, act)?;
        let mut inputs = Vec::with_capacity(self.deconvs.len());
        let mut bn_out = Vec::new();
        let mut bn_caches = Vec::new();
        for (i, d) in self.deconvs.iter().enumerate() {
            let y = d.forward(&cur)?;
            inputs.push(std::mem::replace(&mut cur, y));
            if i + 1 < self.deconvs.len() {
                let (y, cache) = bn(i, &cur)?;
                bn_caches.push(cache);
                cur = leaky_relu(&y, LEAKY_SLOPE);
                bn_out.push(y);
            }
        }
        Ok(DecoderCache {
            mode,
            z: z.to_vec(),
            fc_out,
            inputs,
            bn_out,
            bn_caches,
            output: cur,
        })
    }

    /// Returns `(grad_z, parameter gradients in HasParams order)`.
    pub fn backward(&self, cache: &DecoderCache, grad_out: &Tensor3) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::Shape(format!(
                "decoder gradient {:?}, expected {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        let nd = self.deconvs.len();
        let mut dgrads = vec![(Vec::new(), Vec::new()); nd];
        let mut bgrads = vec![(Vec::new(), Vec::new()); self.bns.len()];
        let mut g = grad_out.clone();
        for i in (0..nd).rev() {
            if i < self.bns.len() {
                g = leaky_relu_backward(&cache.bn_out[i], &g, LEAKY_SLOPE);
                let (gx, gg, gb) = self.bns[i].backward(&cache.bn_caches[i], &g)?;
                bgrads[i] = (gg, gb);
                g = gx;
            }
            let cg = self.deconvs[i].backward(&cache.inputs[i], &g, true)?;
            dgrads[i] = (cg.grad_w, cg.grad_b);
            g = cg.grad_x.expect("requested");
        }
        let mut gfc = g.data;
        leaky_relu_backward_slice(&cache.fc_out, &mut gfc, LEAKY_SLOPE);
        let lg = self.fc.backward(&cache.z, &gfc, true)?;
        let mut params = vec![lg.grad_w, lg.grad_b];
        for i in 0..nd {
            let (w, b) = std::mem::take(&mut dgrads[i]);
            params.push(w);
            params.push(b);
            if i < self.bns.len() {
                let (gg, gb) = std::mem::take(&mut bgrads[i]);
                params.push(gg);
                params.push(gb);
            }
        }
        Ok((lg.grad_x.expect("requested"), params))
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

impl HasParams for Decoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.fc.weight, &self.fc.bias];
        for (i, d) in self.deconvs.iter().enumerate() {
            v.push(&d.weight);
            v.push(&d.bias);
            if let Some(bn) = self.bns.get(i) {
                v.push(&bn.gamma);
                v.push(&bn.beta);
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.fc.weight, &mut self.fc.bias];
        let mut bns = self.bns.iter_mut();
        for d in self.deconvs.iter_mut() {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
            if let Some(bn) = bns.next() {
                v.push(&mut bn.gamma);
                v.push(&mut bn.beta);
            }
        }
        v
    }
}
