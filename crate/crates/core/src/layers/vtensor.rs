use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;
use crate::tensor::{split_channels, Tensor};

/// A vector-valued feature map stored as a real tensor whose last axis holds
/// `d·C` channels in component-blocked order.
#[derive(Debug, Clone, PartialEq)]
pub struct VTensor<T> {
    base: Tensor<T>,
    d: usize,
}

impl<T: Real> VTensor<T> {
    pub fn new(base: Tensor<T>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid!("algebra dimension must be positive"));
        }
        if !base.channels().is_multiple_of(d) {
            return Err(shape_err!(
                "{} real channels are not divisible by d = {d}",
                base.channels()
            ));
        }
        Ok(VTensor { base, d })
    }

    /// Concatenates `d` component tensors of identical shape channel-wise.
    pub fn from_components(components: &[Tensor<T>]) -> Result<Self> {
        let d = components.len();
        let first = components.first().ok_or_else(|| invalid!("no components"))?;
        if components.iter().any(|c| c.shape() != first.shape()) {
            return Err(shape_err!("components must share a shape"));
        }
        let (rows, c) = split_channels(first.shape())?;
        let mut data = Vec::with_capacity(rows * c * d);
        for r in 0..rows {
            for comp in components {
                data.extend_from_slice(&comp.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = first.shape().to_vec();
        *shape.last_mut().unwrap() = c * d;
        VTensor::new(Tensor::from_parts(shape, data), d)
    }

    pub fn base(&self) -> &Tensor<T> {
        &self.base
    }

    pub fn into_base(self) -> Tensor<T> {
        self.base
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of vector channels `C`.
    pub fn vchannels(&self) -> usize {
        self.base.channels() / self.d
    }

    pub fn shape(&self) -> &[usize] {
        self.base.shape()
    }

    /// Component `i` as a real tensor with `C` channels.
    pub fn component(&self, i: usize) -> Tensor<T> {
        let c = self.vchannels();
        let (rows, dc) = split_channels(self.base.shape()).expect("non-empty shape");
        let mut data = Vec::with_capacity(rows * c);
        for r in 0..rows {
            data.extend_from_slice(&self.base.data()[r * dc + i * c..r * dc + (i + 1) * c]);
        }
        let mut shape = self.base.shape().to_vec();
        *shape.last_mut().unwrap() = c;
        Tensor::from_parts(shape, data)
    }

    /// Coordinates of vector channel `ch` at flat spatial position `row`.
    pub fn vector_at(&self, row: usize, ch: usize) -> Vec<T> {
        let c = self.vchannels();
        let dc = self.base.channels();
        (0..self.d)
            .map(|i| self.base.data()[row * dc + i * c + ch])
            .collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        VTensor {
            base: self.base.map(f),
            d: self.d,
        }
    }
}
