//! Shared-weight per-frame feature extractor and spatio-temporal fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Act, ConvBnAct};
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::Params;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// `(out_channels, stride)` per 3×3 conv block.
    pub stages: Vec<(usize, usize)>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::with_width(128)
    }
}

impl BackboneConfig {
    /// Three blocks with strides (2, 2, 1) ending at `channels`.
    pub fn with_width(channels: usize) -> Self {
        let c = channels.max(4);
        Self {
            stages: vec![(c / 4, 2), (c / 2, 2), (channels, 1)],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.0)
    }

    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.1).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        for &(c, s) in &self.stages {
            if c == 0 || !(1..=2).contains(&s) {
                return Err(Error::Config(format!(
                    "backbone stage ({c}, {s}) needs channels > 0 and stride 1 or 2"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    stages: Vec<ConvBnAct>,
    stride: usize,
}

impl Backbone {
    pub fn build(p: &mut Params, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut in_c = 1;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (i, &(out_c, stride)) in cfg.stages.iter().enumerate() {
            let spec = ConvSpec::same(in_c, out_c, 3).with_stride(stride);
            stages.push(ConvBnAct::build(p, &format!("backbone.stage{i}"), spec, Act::Silu)?);
            in_c = out_c;
        }
        Ok(Self {
            stages,
            stride: cfg.total_stride(),
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Features of one `[1,H,W]` (or `[H,W]`) frame.
    pub fn forward_frame(&self, frame: &Tensor) -> Result<Tensor> {
        let mut x = match frame.shape() {
            [h, w] => frame.clone().reshape(&[1, *h, *w])?,
            [1, _, _] => frame.clone(),
            s => {
                return Err(Error::shape(
                    "backbone",
                    format!("frame must be [H,W] or [1,H,W], got {s:?}"),
                ))
            }
        };
        for stage in &self.stages {
            x = stage.forward(&x)?;
        }
        Ok(x)
    }

    /// Maps each frame of a `[T,H,W]` or `[T,1,H,W]` stack with the same weights.
    pub fn extract(&self, frames: &Tensor) -> Result<Tensor> {
        let t = match frames.shape() {
            [t, _, _] | [t, 1, _, _] => *t,
            s => {
                return Err(Error::shape(
                    "backbone",
                    format!("frame stack must be [T,H,W] or [T,1,H,W], got {s:?}"),
                ))
            }
        };
        let feats = (0..t)
            .map(|i| self.forward_frame(&frames.index0(i)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&feats)
    }
}

/// `Conv3×3(Concat[spatial, temporal])` with BN and SiLU, back to `C` channels.
#[derive(Debug, Clone)]
pub struct FuseSt {
    pub conv: ConvBnAct,
}

impl FuseSt {
    pub fn build(p: &mut Params, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: ConvBnAct::build(p, prefix, ConvSpec::same(2 * channels, channels, 3), Act::Silu)?,
        })
    }

    pub fn forward(&self, spatial: &Tensor, temporal: &Tensor) -> Result<Tensor> {
        if spatial.shape() != temporal.shape() {
            return Err(Error::shape(
                "fuse_st",
                format!("spatial {:?} vs temporal {:?}", spatial.shape(), temporal.shape()),
            ));
        }
        self.conv.forward(&Tensor::concat(&[spatial, temporal], 0)?)
    }
}
