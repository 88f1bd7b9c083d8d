//! Precision, recall, F1 and all-point average precision.

use std::collections::BTreeMap;

use crate::detect::{BBox, FrameRecord};

pub const AP_IOU: f64 = 0.5;

/// A retained prediction's score and whether it matched a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub tp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, written as `2TP / (2TP + FP + FN)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy matching within one frame: predictions by descending score (ties
/// by input order) take the highest-IoU unmatched ground truth at or above
/// `iou_thresh`. Returns the per-prediction outcomes and the miss count.
pub fn match_frame(preds: &[BBox], gts: &[BBox], iou_thresh: f64) -> (Vec<ScoredMatch>, usize) {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = preds[i].iou(gt);
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push(ScoredMatch {
            score: preds[i].score,
            tp: best.is_some(),
        });
    }
    let missed = taken.iter().filter(|t| !**t).count();
    (out, missed)
}

/// Outcomes pooled over many frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matches {
    pub scored: Vec<ScoredMatch>,
    pub counts: Counts,
    pub n_gt: usize,
}

impl Matches {
    pub fn add_frame(&mut self, preds: &[BBox], gts: &[BBox], iou_thresh: f64) {
        let (scored, missed) = match_frame(preds, gts, iou_thresh);
        let tp = scored.iter().filter(|m| m.tp).count();
        self.counts.tp += tp;
        self.counts.fp += scored.len() - tp;
        self.counts.fn_ += missed;
        self.n_gt += gts.len();
        self.scored.extend(scored);
    }
}

pub fn match_frames(preds: &[Vec<BBox>], gts: &[Vec<BBox>], iou_thresh: f64) -> Matches {
    let mut m = Matches::default();
    let empty = Vec::new();
    for i in 0..preds.len().max(gts.len()) {
        m.add_frame(preds.get(i).unwrap_or(&empty), gts.get(i).unwrap_or(&empty), iou_thresh);
    }
    m
}

/// `(recall, precision)` at each distinct score threshold, highest score first.
pub fn pr_curve(scored: &[ScoredMatch], n_gt: usize) -> Vec<(f64, f64)> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, m) in sorted.iter().enumerate() {
        if m.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(i + 1).map_or(true, |next| next.score != m.score);
        if last_of_group {
            points.push((ratio(tp, n_gt), ratio(tp, tp + fp)));
        }
    }
    points
}

/// Exact area under the precision envelope (precision made monotone from the right).
pub fn average_precision(scored: &[ScoredMatch], n_gt: usize) -> f64 {
    let points = pr_curve(scored, n_gt);
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(r, _), &p) in points.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

pub fn pr_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("recall,precision\n");
    for (r, p) in points {
        s.push_str(&format!("{r},{p}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    pub pr_points: Vec<(f64, f64)>,
}

impl EvalResult {
    pub fn from_matches(m: &Matches) -> Self {
        let c = m.counts;
        Self {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            ap50: average_precision(&m.scored, m.n_gt),
            pr_points: pr_curve(&m.scored, m.n_gt),
        }
    }
}

/// Evaluates JSON-lines style records, pairing frames by `frame_id`.
pub fn evaluate_records(dets: &[FrameRecord], gts: &[FrameRecord], iou_thresh: f64) -> EvalResult {
    let mut frames: BTreeMap<usize, (Vec<BBox>, Vec<BBox>)> = BTreeMap::new();
    for r in dets {
        frames.entry(r.frame_id).or_default().0.extend(r.boxes.iter().map(|b| b.to_bbox()));
    }
    for r in gts {
        frames.entry(r.frame_id).or_default().1.extend(r.boxes.iter().map(|b| b.to_bbox()));
    }
    let mut m = Matches::default();
    for (preds, truth) in frames.values() {
        m.add_frame(preds, truth, iou_thresh);
    }
    EvalResult::from_matches(&m)
}
