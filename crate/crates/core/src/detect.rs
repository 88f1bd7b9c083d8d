//! Anchor-free detection head, box decoding, and non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Act, Conv, ConvBnAct};
use crate::tensor::{sigmoid, ConvSpec, Tensor};
use crate::weights::Params;

pub const NMS_IOU: f64 = 0.65;
pub const CONF_THRESH: f64 = 0.001;

/// Axis-aligned box in pixel coordinates, center/size form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub class_id: u32,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::scored(cx, cy, w, h, 1.0)
    }

    pub fn scored(cx: f64, cy: f64, w: f64, h: f64, score: f64) -> Self {
        Self {
            cx,
            cy,
            w,
            h,
            score,
            class_id: 0,
        }
    }

    /// From corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.w, self.h, self.score].iter().all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clips to `[0, width] × [0, height]`; `None` if nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let (x1, y1, x2, y2) = self.corners();
        let (x1, x2) = (x1.clamp(0.0, width), x2.clamp(0.0, width));
        let (y1, y2) = (y1.clamp(0.0, height), y2.clamp(0.0, height));
        (x2 > x1 && y2 > y1).then(|| BBox {
            score: self.score,
            class_id: self.class_id,
            ..BBox::from_corners(x1, y1, x2, y2)
        })
    }
}

/// JSON form of a box; `score` is omitted for annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxRecord {
    pub fn annotation(b: &BBox) -> Self {
        Self {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            score: None,
        }
    }

    pub fn detection(b: &BBox) -> Self {
        Self {
            score: Some(b.score),
            ..Self::annotation(b)
        }
    }

    pub fn to_bbox(&self) -> BBox {
        BBox::scored(self.cx, self.cy, self.w, self.h, self.score.unwrap_or(1.0))
    }
}

/// One JSON-lines record: all boxes of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub boxes: Vec<BoxRecord>,
}

pub fn to_jsonl(records: &[FrameRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn from_jsonl(text: &str) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let rec = serde_json::from_str(trimmed).map_err(|e| Error::Format {
                format: "jsonl",
                offset,
                msg: e.to_string(),
            })?;
            out.push(rec);
        }
        offset += line.len();
    }
    Ok(out)
}

/// Raw head maps over the `H'×W'` grid.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[4,H',W']`: `dx, dy, log w, log h` per cell.
    pub reg: Tensor,
    pub obj: Tensor,
    pub cls: Tensor,
}

/// Decoupled head: one stem for classification, another for regression and objectness.
#[derive(Debug, Clone)]
pub struct Head {
    pub cls_stem: [ConvBnAct; 2],
    pub reg_stem: [ConvBnAct; 2],
    pub cls_pred: Conv,
    pub reg_pred: Conv,
    pub obj_pred: Conv,
}

impl Head {
    pub fn build(p: &mut Params, prefix: &str, channels: usize) -> Result<Self> {
        let block = |p: &mut Params, name: &str| {
            ConvBnAct::build(p, &format!("{prefix}.{name}"), ConvSpec::same(channels, channels, 3), Act::Silu)
        };
        Ok(Self {
            cls_stem: [block(p, "cls_stem0")?, block(p, "cls_stem1")?],
            reg_stem: [block(p, "reg_stem0")?, block(p, "reg_stem1")?],
            cls_pred: Conv::build(p, &format!("{prefix}.cls_pred"), ConvSpec::pointwise(channels, 1))?,
            reg_pred: Conv::build(p, &format!("{prefix}.reg_pred"), ConvSpec::pointwise(channels, 4))?,
            obj_pred: Conv::build(p, &format!("{prefix}.obj_pred"), ConvSpec::pointwise(channels, 1))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<HeadOutput> {
        let cls_feat = self.cls_stem[1].forward(&self.cls_stem[0].forward(x)?)?;
        let reg_feat = self.reg_stem[1].forward(&self.reg_stem[0].forward(x)?)?;
        Ok(HeadOutput {
            reg: self.reg_pred.forward(&reg_feat)?,
            obj: self.obj_pred.forward(&reg_feat)?,
            cls: self.cls_pred.forward(&cls_feat)?,
        })
    }
}

/// One box per grid cell, in row-major cell order.
pub fn decode(out: &HeadOutput, stride: usize) -> Result<Vec<BBox>> {
    let (rc, h, w) = out.reg.dims3()?;
    if rc != 4 || out.obj.shape() != [1, h, w] || out.cls.shape() != [1, h, w] {
        return Err(Error::shape(
            "decode",
            format!(
                "reg {:?}, obj {:?}, cls {:?} do not share one grid",
                out.reg.shape(),
                out.obj.shape(),
                out.cls.shape()
            ),
        ));
    }
    let s = stride as f64;
    let hw = h * w;
    let reg = out.reg.data();
    let mut boxes = Vec::with_capacity(hw);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let [dx, dy, lw, lh] = [0, 1, 2, 3].map(|k| reg[k * hw + i] as f64);
            let score = sigmoid(out.obj.data()[i]) as f64 * sigmoid(out.cls.data()[i]) as f64;
            boxes.push(BBox::scored(
                (col as f64 + dx) * s,
                (row as f64 + dy) * s,
                lw.exp() * s,
                lh.exp() * s,
                score,
            ));
        }
    }
    Ok(boxes)
}

/// Inverse of [`decode`]'s geometry for a box assigned to cell `(row, col)`.
pub fn encode(b: &BBox, stride: usize, row: usize, col: usize) -> [f64; 4] {
    let s = stride as f64;
    [b.cx / s - col as f64, b.cy / s - row as f64, (b.w / s).ln(), (b.h / s).ln()]
}

/// Greedy NMS: keeps boxes scoring above `conf_thresh`, highest first (ties
/// by input order), dropping any whose IoU with a kept box exceeds `iou_thresh`.
pub fn nms(boxes: &[BBox], iou_thresh: f64, conf_thresh: f64) -> Vec<BBox> {
    let mut order: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].score > conf_thresh).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score));
    let mut kept: Vec<BBox> = Vec::new();
    for i in order {
        let cand = &boxes[i];
        if kept.iter().all(|k| k.iou(cand) <= iou_thresh) {
            kept.push(*cand);
        }
    }
    kept
}
