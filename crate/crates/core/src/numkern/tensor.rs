use crate::error::{Error, Result};

/// Dense `batch × channels × length` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub batch: usize,
    pub channels: usize,
    pub length: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Tensor3 {
            batch,
            channels,
            length,
            data: vec![0.0; batch * channels * length],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if batch == 0 || channels == 0 || length == 0 {
            return Err(Error::Shape(format!(
                "tensor dims must be positive, got ({batch}, {channels}, {length})"
            )));
        }
        if data.len() != batch * channels * length {
            return Err(Error::Shape(format!(
                "tensor ({batch}, {channels}, {length}) needs {} values, got {}",
                batch * channels * length,
                data.len()
            )));
        }
        Ok(Tensor3 {
            batch,
            channels,
            length,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.channels + c) * self.length + t
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[self.idx(b, c, t)]
    }

    /// The `channels × length` block of one batch element.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.channels * self.length;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.channels * self.length;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Stack single-sample tensors along the batch axis.
    pub fn stack(parts: &[Tensor3]) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let (c, l) = (first.channels, first.length);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut batch = 0;
        for p in parts {
            if p.channels != c || p.length != l {
                return Err(Error::Shape(format!(
                    "cannot stack ({}, {}) with ({c}, {l})",
                    p.channels, p.length
                )));
            }
            data.extend_from_slice(&p.data);
            batch += p.batch;
        }
        Tensor3::from_vec(batch, c, l, data)
    }
}
