//! End-to-end detector: backbone, the three domain branches, fusion and head.

use crate::backbone::{Backbone, FuseSt};
use crate::config::{PipelineConfig, RcuMode};
use crate::detect::{self, BBox, Head, HeadOutput};
use crate::error::{Error, Result};
use crate::lgfm::Lgfm;
use crate::msrm::Msrm;
use crate::rcu::RcuTree;
use crate::tdem::Tdem;
use crate::tensor::Tensor;
use crate::weights::{Params, WeightStore};

/// Intermediate feature maps of one window, all `[C,H',W']`.
#[derive(Debug, Clone)]
pub struct Features {
    pub spatial: Tensor,
    pub temporal: Tensor,
    pub st: Tensor,
    /// `None` when the frequency branch is disabled.
    pub local_freq: Option<Tensor>,
    pub global_freq: Option<Tensor>,
    pub fused: Tensor,
}

/// All modules are always built so that a weight file or seed yields the same
/// parameters whatever the ablation flags; disabled modules are skipped at run time.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: PipelineConfig,
    pub backbone: Backbone,
    pub msrm: Msrm,
    pub tdem: Tdem,
    pub fuse: FuseSt,
    pub lgfm: Lgfm,
    pub rcu: RcuTree,
    pub head: Head,
}

impl Detector {
    pub fn build(cfg: &PipelineConfig, p: &mut Params) -> Result<Self> {
        cfg.validate()?;
        let (t, c) = (cfg.frames, cfg.channels);
        Ok(Self {
            cfg: cfg.clone(),
            backbone: Backbone::build(p, &cfg.backbone())?,
            msrm: Msrm::build(p, "msrm", t, c, cfg.gamma)?,
            tdem: Tdem::build(p, "tdem", t, c)?,
            fuse: FuseSt::build(p, "fuse_st", c)?,
            lgfm: Lgfm::build(p, "lgfm", t, c, cfg.attention())?,
            rcu: RcuTree::build(p, "rcu", c, &cfg.csab)?,
            head: Head::build(p, "head", c)?,
        })
    }

    /// Seeded weights; also returns them so they can be saved.
    pub fn random(cfg: &PipelineConfig, seed: u64) -> Result<(Self, WeightStore)> {
        let mut p = Params::random(seed);
        let det = Self::build(cfg, &mut p)?;
        Ok((det, p.into_store()))
    }

    /// Loads every parameter from `store`, which must hold exactly the expected set.
    pub fn from_store(cfg: &PipelineConfig, store: &WeightStore) -> Result<Self> {
        let mut p = Params::from_store(store);
        let det = Self::build(cfg, &mut p)?;
        let used = p.into_store();
        if let Some(extra) = store.names().find(|n| used.get(n).is_none()) {
            return Err(Error::Config(format!("unexpected weight `{extra}`")));
        }
        Ok(det)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stride(&self) -> usize {
        self.backbone.stride()
    }

    /// Backbone features `[N,C,H',W']` for a `[N,H,W]` frame stack.
    pub fn features(&self, frames: &Tensor) -> Result<Tensor> {
        self.backbone.extract(frames)
    }

    /// Runs everything after the backbone on a `[T,C,H',W']` window.
    pub fn forward_features(&self, window: &Tensor) -> Result<(HeadOutput, Features)> {
        let (t, c, ..) = window.dims4()?;
        if t != self.cfg.frames || c != self.cfg.channels {
            return Err(Error::shape(
                "detector",
                format!(
                    "feature window must be [{},{},H,W], got {:?}",
                    self.cfg.frames,
                    self.cfg.channels,
                    window.shape()
                ),
            ));
        }
        let ab = self.cfg.ablation;
        let key = window.index0(t - 1)?;
        let spatial = if ab.msrm { self.msrm.forward(window)? } else { key.clone() };
        let temporal = if ab.tdem { self.tdem.forward(window)? } else { key };
        let st = self.fuse.forward(&spatial, &temporal)?;
        let (local_freq, global_freq, fused) = if ab.lgfm {
            let (lf, gf) = self.lgfm.forward(window)?;
            let fused = match ab.rcu {
                RcuMode::None => st.add(&lf)?.add(&gf)?,
                RcuMode::A => self.rcu.local.forward(&lf, &st)?,
                RcuMode::B => self.rcu.local.forward(&lf, &st)?.add(&self.rcu.global.forward(&gf, &st)?)?,
                RcuMode::C => self.rcu.forward(&lf, &gf, &st)?,
            };
            (Some(lf), Some(gf), fused)
        } else {
            (None, None, st.clone())
        };
        let out = self.head.forward(&fused)?;
        Ok((
            out,
            Features {
                spatial,
                temporal,
                st,
                local_freq,
                global_freq,
                fused,
            },
        ))
    }

    /// Head output for a `[T,H,W]` frame window.
    pub fn forward(&self, frames: &Tensor) -> Result<HeadOutput> {
        Ok(self.forward_features(&self.features(frames)?)?.0)
    }

    /// Decodes, clips to the image and suppresses overlapping boxes.
    pub fn postprocess(&self, out: &HeadOutput, height: usize, width: usize) -> Result<Vec<BBox>> {
        let boxes: Vec<BBox> = detect::decode(out, self.stride())?
            .into_iter()
            .filter_map(|b| b.clamp_to(width as f64, height as f64))
            .collect();
        Ok(detect::nms(&boxes, self.cfg.nms_iou, self.cfg.conf_thresh))
    }

    /// Detections on the keyframe (last frame) of a `[T,H,W]` window.
    pub fn detect(&self, frames: &Tensor) -> Result<Vec<BBox>> {
        let (_, h, w) = frames.dims3()?;
        self.postprocess(&self.forward(frames)?, h, w)
    }

    /// Detections for every frame of a `[N,H,W]` sequence, each frame acting as
    /// keyframe. Frames before the start are filled with frame 0. Backbone
    /// features are computed once per frame.
    pub fn detect_sequence(&self, frames: &Tensor) -> Result<Vec<Vec<BBox>>> {
        let (n, h, w) = frames.dims3()?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let feats = self.features(frames)?;
        let per_frame = (0..n).map(|i| feats.index0(i)).collect::<Result<Vec<_>>>()?;
        let t = self.cfg.frames;
        (0..n)
            .map(|key| {
                let window: Vec<Tensor> = (0..t)
                    .map(|j| per_frame[(key + j + 1).saturating_sub(t)].clone())
                    .collect();
                let (out, _) = self.forward_features(&Tensor::stack(&window)?)?;
                self.postprocess(&out, h, w)
            })
            .collect()
    }
}
