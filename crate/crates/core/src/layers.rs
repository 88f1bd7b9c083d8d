//! Parameterized layers shared by the feature modules.

use crate::error::Result;
use crate::tensor::{self, ConvSpec, Tensor};
use crate::weights::{Init, Params};

pub const BN_EPS: f32 = 1e-5;
pub const PRELU_INIT: f32 = 0.25;

#[derive(Debug, Clone)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Conv {
    pub fn build(p: &mut Params, prefix: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.fan_in();
        let weight = p.take(&format!("{prefix}.weight"), &spec.weight_shape(), Init::FanIn(fan_in))?;
        let bias = if spec.bias {
            Some(p.take(&format!("{prefix}.bias"), &[spec.out_channels], Init::FanIn(fan_in))?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::conv2d(x, &self.weight, self.bias.as_ref(), &self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
}

impl BatchNorm {
    pub fn build(p: &mut Params, prefix: &str, channels: usize) -> Result<Self> {
        let c = [channels];
        Ok(Self {
            gamma: p.take(&format!("{prefix}.gamma"), &c, Init::Const(1.0))?,
            beta: p.take(&format!("{prefix}.beta"), &c, Init::Const(0.0))?,
            mean: p.take(&format!("{prefix}.mean"), &c, Init::Const(0.0))?,
            var: p.take(&format!("{prefix}.var"), &c, Init::Const(1.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::batch_norm(
            x,
            self.gamma.data(),
            self.beta.data(),
            self.mean.data(),
            self.var.data(),
            BN_EPS,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Identity,
    Relu,
    Silu,
    Sigmoid,
}

impl Act {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Act::Identity => x.clone(),
            Act::Relu => x.relu(),
            Act::Silu => x.silu(),
            Act::Sigmoid => x.sigmoid(),
        }
    }
}

/// Convolution followed by batch normalization and an activation.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Act,
}

impl ConvBnAct {
    pub fn build(p: &mut Params, prefix: &str, spec: ConvSpec, act: Act) -> Result<Self> {
        Ok(Self {
            conv: Conv::build(p, &format!("{prefix}.conv"), spec)?,
            bn: BatchNorm::build(p, &format!("{prefix}.bn"), spec.out_channels)?,
            act,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.bn.forward(&self.conv.forward(x)?)?;
        Ok(self.act.apply(&y))
    }
}

/// Two 3×3 convolutions with a PReLU between them and an identity skip.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub slope: Tensor,
}

impl ResBlock {
    pub fn build(p: &mut Params, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::build(p, &format!("{prefix}.conv1"), ConvSpec::same(channels, channels, 3))?,
            slope: p.take(&format!("{prefix}.prelu"), &[1], Init::Const(PRELU_INIT))?,
            conv2: Conv::build(p, &format!("{prefix}.conv2"), ConvSpec::same(channels, channels, 3))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(x)?.prelu(self.slope.data()[0]);
        x.add(&self.conv2.forward(&h)?)
    }
}

/// Per-token layer normalization over the trailing axis of a `[N, D]` matrix.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn build(p: &mut Params, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: p.take(&format!("{prefix}.gamma"), &[dim], Init::Const(1.0))?,
            beta: p.take(&format!("{prefix}.beta"), &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.gamma.len();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        Ok(out)
    }
}

/// Affine map on the rows of a `[N, in]` matrix: `x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn build(p: &mut Params, prefix: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: p.take(&format!("{prefix}.weight"), &[input, output], Init::FanIn(input))?,
            bias: p.take(&format!("{prefix}.bias"), &[output], Init::FanIn(input))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight)?;
        let n = self.bias.len();
        for row in y.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }
}
