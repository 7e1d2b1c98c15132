use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};
use crate::rng::ChaCha8Rng;

/// Glorot-uniform draw over `shape` with the given fans.
fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit)).map(Tensor::with_grad)
}

/// A 3D convolution with weights `(out_ch, in_ch, kd, kh, kw)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dLayer {
    pub fn new(
        weight: Tensor,
        bias: Tensor,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let [out_ch, ..] = weight.dims5()?;
        if bias.len() != out_ch {
            return Err(TensorError::ShapeMismatch {
                axis: "bias length",
                expected: out_ch,
                actual: bias.len(),
            });
        }
        if stride.contains(&0) {
            return Err(TensorError::InvalidArgument("stride must be positive"));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let taps: usize = kernel.iter().product();
        let shape = [out_ch, in_ch, kernel[0], kernel[1], kernel[2]];
        let weight = glorot(&shape, in_ch * taps, out_ch * taps, rng)?;
        let bias = Tensor::zeros(&[out_ch])?.with_grad();
        Self::new(weight, bias, stride, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        alloc::vec![&mut self.weight, &mut self.bias]
    }
}

/// A fully connected layer with weights `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [out_dim, _] = weight.dims2()?;
        if bias.len() != out_dim {
            return Err(TensorError::ShapeMismatch {
                axis: "bias length",
                expected: out_dim,
                actual: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = glorot(&[out_dim, in_dim], in_dim, out_dim, rng)?;
        let bias = Tensor::zeros(&[out_dim])?.with_grad();
        Self::new(weight, bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        alloc::vec![&mut self.weight, &mut self.bias]
    }
}
