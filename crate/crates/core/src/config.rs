//! Pipeline configuration, loaded from and saved as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::detect::{CONF_THRESH, NMS_IOU};
use crate::error::{Error, Result};
use crate::lgfm::WindowAttnConfig;
use crate::loss::LossWeights;
use crate::rcu::CsabSpec;

/// Which compensation units feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RcuMode {
    /// Plain sum of spatio-temporal and both frequency features.
    None,
    /// Only the local-frequency unit.
    A,
    /// Local and global units, summed.
    B,
    /// Both units merged by a third.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub msrm: bool,
    pub tdem: bool,
    pub lgfm: bool,
    pub rcu: RcuMode,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            msrm: true,
            tdem: true,
            lgfm: true,
            rcu: RcuMode::C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Time window size; the last frame is the keyframe.
    pub frames: usize,
    /// Feature width `c` shared by every branch.
    pub channels: usize,
    /// Side of the square attention windows.
    pub window: usize,
    pub heads: usize,
    /// Backbone output stride in pixels.
    pub stride: usize,
    /// Non-local residual weight.
    pub gamma: f32,
    pub csab: CsabSpec,
    pub loss: LossWeights,
    pub nms_iou: f64,
    pub conf_thresh: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frames: 5,
            channels: 128,
            window: 8,
            heads: 4,
            stride: 4,
            gamma: 1.0,
            csab: CsabSpec::default(),
            loss: LossWeights::default(),
            nms_iou: NMS_IOU,
            conf_thresh: CONF_THRESH,
            seed: 0,
            ablation: Ablation::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames < 2 {
            return bad(format!("frames must be at least 2, got {}", self.frames));
        }
        if self.channels < 2 {
            return bad(format!("channels must be at least 2, got {}", self.channels));
        }
        if ![1, 2, 4, 8].contains(&self.stride) {
            return bad(format!("stride must be 1, 2, 4 or 8, got {}", self.stride));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) || !(0.0..=1.0).contains(&self.conf_thresh) {
            return bad("NMS thresholds must lie in [0, 1]".into());
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite".into());
        }
        if self.csab.blocks == 0 {
            return bad("csab.blocks must be at least 1".into());
        }
        self.attention().validate()?;
        self.backbone().validate()?;
        self.loss.validate()
    }

    /// Three 3×3 stages ending at `channels`; the first `log2(stride)` stages downsample.
    pub fn backbone(&self) -> BackboneConfig {
        let mut cfg = BackboneConfig::with_width(self.channels);
        let halvings = self.stride.trailing_zeros() as usize;
        for (i, stage) in cfg.stages.iter_mut().enumerate() {
            stage.1 = if i < halvings { 2 } else { 1 };
        }
        cfg
    }

    pub fn attention(&self) -> WindowAttnConfig {
        WindowAttnConfig::new(self.window, self.heads, self.channels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
