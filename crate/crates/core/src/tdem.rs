//! Temporal dynamics encoding: adjacent-frame differences, a pooled motion
//! encoding, and residual re-injection into the keyframe features.

use crate::error::{Error, Result};
use crate::layers::{Conv, ResBlock};
use crate::tensor::{self, ConvSpec, PoolMode, Tensor};
use crate::weights::Params;

/// `d_i = F_{i+1} - F_i` for a `[T,C,H,W]` window, stacked on channels: `[(T-1)·C, H, W]`.
pub fn frame_diffs(window: &Tensor) -> Result<Tensor> {
    let (t, c, h, w) = window.dims4()?;
    if t < 2 {
        return Err(Error::shape("frame_diffs", format!("window needs T >= 2 frames, got {t}")));
    }
    let step = c * h * w;
    let d = window.data();
    let data = (0..(t - 1) * step).map(|i| d[i + step] - d[i]).collect();
    Tensor::new(vec![(t - 1) * c, h, w], data)
}

#[derive(Debug, Clone)]
pub struct Tdem {
    /// 3×3 conv over the stacked differences, before stride-2 average pooling.
    pub motion: Conv,
    /// The single `Conv(F_D)` shared by both re-injection paths.
    pub lift: Conv,
    pub res1: ResBlock,
    pub res2: ResBlock,
}

impl Tdem {
    pub fn build(p: &mut Params, prefix: &str, frames: usize, channels: usize) -> Result<Self> {
        if frames < 2 {
            return Err(Error::Config(format!("temporal branch needs T >= 2, got {frames}")));
        }
        let c = channels;
        Ok(Self {
            motion: Conv::build(p, &format!("{prefix}.motion"), ConvSpec::same((frames - 1) * c, c, 3))?,
            lift: Conv::build(p, &format!("{prefix}.lift"), ConvSpec::same(c, c, 3))?,
            res1: ResBlock::build(p, &format!("{prefix}.res1"), c)?,
            res2: ResBlock::build(p, &format!("{prefix}.res2"), c)?,
        })
    }

    /// `F_D = AvgPool_{2,2}(Conv(diffs))`.
    pub fn encode_motion(&self, diffs: &Tensor) -> Result<Tensor> {
        let (_, h, w) = diffs.dims3()?;
        if h < 2 || w < 2 {
            return Err(Error::shape(
                "encode_motion",
                format!("spatial extent {h}x{w} too small for stride-2 pooling"),
            ));
        }
        tensor::pool2d(&self.motion.forward(diffs)?, PoolMode::Avg, 2, 2)
    }

    /// `F_u = F_t + up(Conv(F_D))`, `F_T = ResB2(F_u) + up(ResB1(Conv(F_D)))`.
    pub fn enhance(&self, key: &Tensor, motion: &Tensor) -> Result<Tensor> {
        let (c, h, w) = key.dims3()?;
        let (mc, mh, mw) = motion.dims3()?;
        if mc != c || mh != h / 2 || mw != w / 2 {
            return Err(Error::shape(
                "enhance",
                format!("motion {:?} is not the half-resolution of keyframe {:?}", motion.shape(), key.shape()),
            ));
        }
        let lifted = self.lift.forward(motion)?;
        let up = |t: &Tensor| tensor::resize_nearest(t, h, w);
        let fused = key.add(&up(&lifted)?)?;
        self.res2.forward(&fused)?.add(&up(&self.res1.forward(&lifted)?)?)
    }

    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        let (t, ..) = window.dims4()?;
        let diffs = frame_diffs(window)?;
        let motion = self.encode_motion(&diffs)?;
        self.enhance(&window.index0(t - 1)?, &motion)
    }
}
