//! Residual compensation units: cross-domain fusion through chained
//! channel-spatial attention blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Act, Conv, ConvBnAct, Linear};
use crate::tensor::{self, ConvSpec, Tensor};
use crate::weights::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsabSpec {
    /// Number of chained blocks per unit.
    pub blocks: usize,
    /// Channel-attention bottleneck ratio.
    pub reduction: usize,
    pub spatial_kernel: usize,
}

impl Default for CsabSpec {
    fn default() -> Self {
        Self {
            blocks: 2,
            reduction: 4,
            spatial_kernel: 7,
        }
    }
}

/// Gate values observed in one block, for inspection.
#[derive(Debug, Clone)]
pub struct CsabTrace {
    pub channel_gate: Vec<f32>,
    pub spatial_gate: Tensor,
}

/// `SAB(CAB(Conv(x))) + x` at constant width.
#[derive(Debug, Clone)]
pub struct Csab {
    pub conv: ConvBnAct,
    pub squeeze: Linear,
    pub excite: Linear,
    pub spatial: Conv,
}

impl Csab {
    pub fn build(p: &mut Params, prefix: &str, channels: usize, spec: &CsabSpec) -> Result<Self> {
        let hidden = (channels / spec.reduction.max(1)).max(1);
        Ok(Self {
            conv: ConvBnAct::build(p, &format!("{prefix}.conv"), ConvSpec::same(channels, channels, 3), Act::Relu)?,
            squeeze: Linear::build(p, &format!("{prefix}.cab.fc1"), channels, hidden)?,
            excite: Linear::build(p, &format!("{prefix}.cab.fc2"), hidden, channels)?,
            spatial: Conv::build(p, &format!("{prefix}.sab"), ConvSpec::same(2, 1, spec.spatial_kernel))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, CsabTrace)> {
        let y = self.conv.forward(x)?;
        let (c, h, w) = y.dims3()?;
        let hw = (h * w) as f32;
        let pooled: Vec<f32> = y.data().chunks(h * w).map(|p| p.iter().sum::<f32>() / hw).collect();
        let descriptor = Tensor::new(vec![1, c], pooled)?;
        let channel_gate = self
            .excite
            .forward(&self.squeeze.forward(&descriptor)?.relu())?
            .sigmoid()
            .into_data();
        let y = y.mul_channels(&channel_gate)?;
        let spatial_gate = self.spatial.forward(&tensor::channel_pool(&y)?)?.sigmoid();
        let out = y.mul_plane(&spatial_gate)?.add(x)?;
        Ok((
            out,
            CsabTrace {
                channel_gate,
                spatial_gate,
            },
        ))
    }
}

/// Fuses two `[C,H,W]` maps: blocks run on the `2C` concatenation and a final
/// 1×1 projection returns to `C` channels.
#[derive(Debug, Clone)]
pub struct Rcu {
    pub blocks: Vec<Csab>,
    pub proj: Conv,
}

impl Rcu {
    pub fn build(p: &mut Params, prefix: &str, channels: usize, spec: &CsabSpec) -> Result<Self> {
        if spec.blocks == 0 {
            return Err(Error::Config("a compensation unit needs at least one block".into()));
        }
        let wide = 2 * channels;
        let blocks = (0..spec.blocks)
            .map(|i| Csab::build(p, &format!("{prefix}.csab{i}"), wide, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            proj: Conv::build(p, &format!("{prefix}.proj"), ConvSpec::pointwise(wide, channels))?,
        })
    }

    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape("rcu_fuse", format!("inputs {:?} vs {:?}", a.shape(), b.shape())));
        }
        let mut x = Tensor::concat(&[a, b], 0)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        self.proj.forward(&x)
    }
}

/// `RCU_3(RCU_1(local, st), RCU_2(global, st))` with three independent weight sets.
#[derive(Debug, Clone)]
pub struct RcuTree {
    pub local: Rcu,
    pub global: Rcu,
    pub merge: Rcu,
}

impl RcuTree {
    pub fn build(p: &mut Params, prefix: &str, channels: usize, spec: &CsabSpec) -> Result<Self> {
        Ok(Self {
            local: Rcu::build(p, &format!("{prefix}.rcu1"), channels, spec)?,
            global: Rcu::build(p, &format!("{prefix}.rcu2"), channels, spec)?,
            merge: Rcu::build(p, &format!("{prefix}.rcu3"), channels, spec)?,
        })
    }

    pub fn forward(&self, local: &Tensor, global: &Tensor, st: &Tensor) -> Result<Tensor> {
        let first = self.local.forward(local, st)?;
        let second = self.global.forward(global, st)?;
        self.merge.forward(&first, &second)
    }
}
