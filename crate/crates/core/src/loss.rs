//! Box regression and classification objectives.
//!
//! The regression loss mixes `1 - IoU` with a normalized Gaussian
//! Wasserstein distance, which keeps a useful gradient for tiny boxes that do
//! not overlap at all. Gradients are taken with respect to the predicted
//! box's `(cx, cy, w, h)`.

use serde::{Deserialize, Serialize};

use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reg: f64,
    pub cls: f64,
    pub obj: f64,
    /// Weight of the IoU term inside the regression loss.
    pub alpha: f64,
    /// Weight of the NWD term inside the regression loss.
    pub beta: f64,
    /// NWD normalizer, in pixels.
    pub c_nwd: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reg: 5.0,
            cls: 1.0,
            obj: 1.0,
            alpha: 0.5,
            beta: 0.5,
            c_nwd: 5.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.reg, self.cls, self.obj, self.alpha, self.beta, self.focal_gamma, self.focal_alpha];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.c_nwd > 0.0) {
            return Err(Error::Config(format!("NWD constant must be positive, got {}", self.c_nwd)));
        }
        Ok(())
    }
}

/// A box as a 2D Gaussian: mean at the center, per-axis standard deviation of half the extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBox {
    pub mean: (f64, f64),
    pub half_extent: (f64, f64),
}

impl GaussianBox {
    pub fn from_box(b: &BBox) -> Result<Self> {
        check(b)?;
        Ok(Self {
            mean: (b.cx, b.cy),
            half_extent: (b.w / 2.0, b.h / 2.0),
        })
    }

    /// Squared 2-Wasserstein distance between two diagonal Gaussians.
    pub fn wasserstein2_sq(&self, other: &GaussianBox) -> f64 {
        let d = [
            self.mean.0 - other.mean.0,
            self.mean.1 - other.mean.1,
            self.half_extent.0 - other.half_extent.0,
            self.half_extent.1 - other.half_extent.1,
        ];
        d.iter().map(|v| v * v).sum()
    }
}

fn check(b: &BBox) -> Result<()> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidBox(format!(
            "({}, {}, {}, {}) needs finite values and positive extents",
            b.cx, b.cy, b.w, b.h
        )))
    }
}

pub fn iou(bp: &BBox, bg: &BBox) -> Result<f64> {
    check(bp)?;
    check(bg)?;
    Ok(bp.iou(bg))
}

pub fn iou_loss(bp: &BBox, bg: &BBox) -> Result<f64> {
    Ok(1.0 - iou(bp, bg)?)
}

pub fn nwd_loss(bp: &BBox, bg: &BBox, c_nwd: f64) -> Result<f64> {
    if !(c_nwd > 0.0) {
        return Err(Error::Config(format!("NWD constant must be positive, got {c_nwd}")));
    }
    let d2 = GaussianBox::from_box(bp)?.wasserstein2_sq(&GaussianBox::from_box(bg)?);
    Ok(1.0 - (-d2.sqrt() / c_nwd).exp())
}

/// Overlap of `[lo_p, hi_p]` and `[lo_g, hi_g]` with its derivative with
/// respect to the predicted center and extent on that axis.
fn overlap_1d(center: f64, extent: f64, g_center: f64, g_extent: f64) -> (f64, [f64; 2]) {
    let (lp, rp) = (center - extent / 2.0, center + extent / 2.0);
    let (lg, rg) = (g_center - g_extent / 2.0, g_center + g_extent / 2.0);
    let lo = lp.max(lg);
    let hi = rp.min(rg);
    if hi <= lo {
        return (0.0, [0.0; 2]);
    }
    let d_lo = if lp >= lg { [1.0, -0.5] } else { [0.0, 0.0] };
    let d_hi = if rp <= rg { [1.0, 0.5] } else { [0.0, 0.0] };
    (hi - lo, [d_hi[0] - d_lo[0], d_hi[1] - d_lo[1]])
}

/// `1 - IoU` and its gradient; the gradient is zero where the boxes do not overlap.
fn iou_loss_grad(bp: &BBox, bg: &BBox) -> (f64, [f64; 4]) {
    let (iw, diw) = overlap_1d(bp.cx, bp.w, bg.cx, bg.w);
    let (ih, dih) = overlap_1d(bp.cy, bp.h, bg.cy, bg.h);
    let inter = iw * ih;
    let union = bp.area() + bg.area() - inter;
    if inter <= 0.0 {
        return (1.0, [0.0; 4]);
    }
    // θ = (cx, cy, w, h)
    let d_inter = [diw[0] * ih, dih[0] * iw, diw[1] * ih, dih[1] * iw];
    let d_area = [0.0, 0.0, bp.h, bp.w];
    let grad = std::array::from_fn(|k| {
        let d_union = d_area[k] - d_inter[k];
        -(d_inter[k] * union - inter * d_union) / (union * union)
    });
    (1.0 - inter / union, grad)
}

/// NWD loss and its gradient; zero gradient at coincidence.
fn nwd_loss_grad(bp: &BBox, bg: &BBox, c_nwd: f64) -> (f64, [f64; 4]) {
    let d = [bp.cx - bg.cx, bp.cy - bg.cy, (bp.w - bg.w) / 2.0, (bp.h - bg.h) / 2.0];
    let dist = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let decay = (-dist / c_nwd).exp();
    if dist == 0.0 {
        return (0.0, [0.0; 4]);
    }
    let k = decay / (c_nwd * dist);
    (1.0 - decay, [k * d[0], k * d[1], k * d[2] / 2.0, k * d[3] / 2.0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvrLoss {
    pub value: f64,
    /// Partial derivatives over the predicted `(cx, cy, w, h)`.
    pub grad: [f64; 4],
}

/// Dual-view regression loss `α(1 - IoU) + β·NWD`.
pub fn dvr_loss(bp: &BBox, bg: &BBox, w: &LossWeights) -> Result<DvrLoss> {
    check(bp)?;
    check(bg)?;
    if !(w.c_nwd > 0.0) {
        return Err(Error::Config(format!("NWD constant must be positive, got {}", w.c_nwd)));
    }
    let (li, gi) = iou_loss_grad(bp, bg);
    let (ln, gn) = nwd_loss_grad(bp, bg, w.c_nwd);
    Ok(DvrLoss {
        value: w.alpha * li + w.beta * ln,
        grad: std::array::from_fn(|k| w.alpha * gi[k] + w.beta * gn[k]),
    })
}

/// Mean sigmoid focal loss over matching logit/target tensors.
pub fn focal_loss(logits: &Tensor, targets: &Tensor, gamma: f64, alpha: f64) -> Result<f64> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "focal_loss",
            format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
        ));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &t)| focal_term(x as f64, t as f64, gamma, alpha))
        .sum();
    Ok(total / logits.len() as f64)
}

fn focal_term(x: f64, t: f64, gamma: f64, alpha: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    let ce = x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
    let p_t = p * t + (1.0 - p) * (1.0 - t);
    let alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t);
    alpha_t * (1.0 - p_t).powf(gamma) * ce
}

pub fn weighted_total(reg: f64, cls: f64, obj: f64, w: &LossWeights) -> f64 {
    w.reg * reg + w.cls * cls + w.obj * obj
}

/// Full objective: mean regression loss over matched pairs (0 without pairs)
/// plus focal classification and objectness terms.
pub fn total_loss(
    pairs: &[(BBox, BBox)],
    cls: (&Tensor, &Tensor),
    obj: (&Tensor, &Tensor),
    w: &LossWeights,
) -> Result<f64> {
    let reg = if pairs.is_empty() {
        0.0
    } else {
        let mut sum = 0.0;
        for (p, g) in pairs {
            sum += dvr_loss(p, g, w)?.value;
        }
        sum / pairs.len() as f64
    };
    let l_cls = focal_loss(cls.0, cls.1, w.focal_gamma, w.focal_alpha)?;
    let l_obj = focal_loss(obj.0, obj.1, w.focal_gamma, w.focal_alpha)?;
    Ok(weighted_total(reg, l_cls, l_obj, w))
}

/// Gradient-descent trajectory of a box under the regression loss.
#[derive(Debug, Clone)]
pub struct BoxFit {
    pub trajectory: Vec<BBox>,
    pub losses: Vec<f64>,
    /// Iterations used, including rejected (step-halving) trials.
    pub iterations: usize,
}

impl BoxFit {
    pub fn last(&self) -> &BBox {
        self.trajectory.last().expect("trajectory starts with the initial box")
    }
}

const MAX_REJECTIONS: usize = 50;

/// Gradient descent on `(cx, cy, w, h)` with step halving whenever a step
/// would raise the loss or collapse the box.
pub fn fit_box(init: &BBox, target: &BBox, w: &LossWeights, steps: usize, lr: f64) -> Result<BoxFit> {
    let mut cur = *init;
    let mut eval = dvr_loss(&cur, target, w)?;
    let mut fit = BoxFit {
        trajectory: vec![cur],
        losses: vec![eval.value],
        iterations: 0,
    };
    let mut lr = lr;
    let mut rejected = 0;
    while fit.iterations < steps {
        let gnorm = eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = cur.w.abs().max(cur.h.abs()).max(1.0);
        if eval.value == 0.0 || gnorm == 0.0 || lr * gnorm <= 1e-13 * scale {
            break;
        }
        fit.iterations += 1;
        let g = eval.grad;
        let cand = BBox {
            cx: cur.cx - lr * g[0],
            cy: cur.cy - lr * g[1],
            w: cur.w - lr * g[2],
            h: cur.h - lr * g[3],
            ..cur
        };
        let next = cand.is_valid().then(|| dvr_loss(&cand, target, w)).transpose()?;
        match next {
            Some(n) if n.value <= eval.value => {
                cur = cand;
                eval = n;
                fit.trajectory.push(cur);
                fit.losses.push(eval.value);
                rejected = 0;
            }
            _ => {
                lr *= 0.5;
                rejected += 1;
                if rejected >= MAX_REJECTIONS {
                    return Err(Error::Diverged(rejected));
                }
            }
        }
    }
    Ok(fit)
}

/// Central-difference gradient of [`dvr_loss`] over the predicted box, with
/// per-coordinate step `1e-4·max(|θ|, 1)`.
pub fn numeric_grad(bp: &BBox, bg: &BBox, w: &LossWeights) -> Result<[f64; 4]> {
    let theta = [bp.cx, bp.cy, bp.w, bp.h];
    let at = |t: [f64; 4]| dvr_loss(&BBox { cx: t[0], cy: t[1], w: t[2], h: t[3], ..*bp }, bg, w).map(|l| l.value);
    let mut g = [0.0; 4];
    for k in 0..4 {
        let h = 1e-4 * theta[k].abs().max(1.0);
        let (mut up, mut down) = (theta, theta);
        up[k] += h;
        down[k] -= h;
        g[k] = (at(up)? - at(down)?) / (2.0 * h);
    }
    Ok(g)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let norm = |v: &[f64; 4]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: [f64; 4] = std::array::from_fn(|k| a[k] - b[k]);
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Distance below which the NWD term is treated as coincident (not differentiable).
pub const COINCIDENCE_RADIUS: f64 = 1e-3;
/// Pairs with any predicted edge this close to the matching target edge sit on
/// an IoU kink and are redrawn.
const EDGE_MARGIN: f64 = 0.05;

/// Whether finite differences are meaningful at this pair: the boxes overlap,
/// no edges nearly coincide and the Gaussians are not coincident.
pub fn smooth_pair(bp: &BBox, bg: &BBox) -> bool {
    let (p, g) = (bp.corners(), bg.corners());
    let edges = [(p.0, g.0), (p.1, g.1), (p.2, g.2), (p.3, g.3)];
    let w2 = GaussianBox::from_box(bp)
        .and_then(|a| Ok(a.wasserstein2_sq(&GaussianBox::from_box(bg)?)))
        .map(f64::sqrt)
        .unwrap_or(0.0);
    bp.intersection(bg) > 0.0
        && edges.iter().all(|(a, b)| (a - b).abs() > EDGE_MARGIN)
        && w2 >= COINCIDENCE_RADIUS
}

/// An overlapping, kink-free `(prediction, target)` pair inside a 64×64 frame.
pub fn random_pair(rng: &mut impl rand::Rng) -> (BBox, BBox) {
    loop {
        let g = BBox::new(
            rng.gen_range(8.0..56.0),
            rng.gen_range(8.0..56.0),
            rng.gen_range(2.0..16.0),
            rng.gen_range(2.0..16.0),
        );
        let p = BBox::new(
            g.cx + rng.gen_range(-0.5..0.5) * g.w,
            g.cy + rng.gen_range(-0.5..0.5) * g.h,
            g.w * rng.gen_range(0.5..2.0),
            g.h * rng.gen_range(0.5..2.0),
        );
        if smooth_pair(&p, &g) {
            return (p, g);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub cases: usize,
    pub max_rel_err: f64,
    pub worst: Option<(BBox, BBox)>,
}

/// Compares analytic and numeric gradients over `cases` seeded random pairs.
pub fn gradcheck(cases: usize, seed: u64, w: &LossWeights) -> Result<GradCheck> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck {
        cases,
        max_rel_err: 0.0,
        worst: None,
    };
    for _ in 0..cases {
        let (p, g) = random_pair(&mut rng);
        let err = relative_error(&dvr_loss(&p, &g, w)?.grad, &numeric_grad(&p, &g, w)?);
        if out.worst.is_none() || err > out.max_rel_err {
            out.max_rel_err = err;
            out.worst = Some((p, g));
        }
    }
    Ok(out)
}
