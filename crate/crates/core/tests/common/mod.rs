//! Independent reference implementations in f64, written as plain loops.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tridomain::detect::BBox;
use tridomain::layers::{Conv, LayerNorm, Linear};
use tridomain::lgfm::{DwPw, FreqEnhance, SwinBranch};
use tridomain::msrm::NonLocal;
use tridomain::tensor::ConvSpec;
use tridomain::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// A `[C,H,W]` map in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, d: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        assert_eq!(s.len(), 3, "expected [C,H,W], got {s:?}");
        Self {
            c: s[0],
            h: s[1],
            w: s[2],
            d: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.d[(c * self.h + y) * self.w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            d: self.d.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn zip(&self, other: &Map, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.c, self.h, self.w), (other.c, other.h, other.w));
        Self {
            d: self.d.iter().zip(&other.d).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        }
    }

    pub fn concat(&self, other: &Map) -> Self {
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut d = self.d.clone();
        d.extend_from_slice(&other.d);
        Self { c: self.c + other.c, d, ..self.clone() }
    }

    /// Broadcasts a one-channel map over every channel.
    pub fn mul_plane(&self, plane: &Map) -> Self {
        assert_eq!(plane.c, 1);
        let mut out = self.clone();
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    *out.at_mut(c, y, x) *= plane.at(0, y, x);
                }
            }
        }
        out
    }
}

pub fn max_err(got: &Tensor, want: &Map) -> f64 {
    assert_eq!(got.len(), want.d.len());
    got.data()
        .iter()
        .zip(&want.d)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Zero-padded cross-correlation written as six nested loops.
pub fn conv_oracle(x: &Map, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Map {
    let (k, s, p, g) = (spec.kernel, spec.stride, spec.padding, spec.groups);
    let ho = (x.h + 2 * p - k) / s + 1;
    let wo = (x.w + 2 * p - k) / s + 1;
    let (in_g, out_g) = (spec.in_channels / g, spec.out_channels / g);
    let wt = weight.data();
    let mut out = Map::zeros(spec.out_channels, ho, wo);
    for o in 0..spec.out_channels {
        let grp = o / out_g;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ic in 0..in_g {
                    let c = grp * in_g + ic;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            let wv = wt[((o * in_g + ic) * k + ky) * k + kx] as f64;
                            acc += wv * x.at(c, iy as usize, ix as usize);
                        }
                    }
                }
                if let Some(b) = bias {
                    acc += b.data()[o] as f64;
                }
                *out.at_mut(o, oy, ox) = acc;
            }
        }
    }
    out
}

pub fn conv_layer(x: &Map, conv: &Conv) -> Map {
    conv_oracle(x, &conv.weight, conv.bias.as_ref(), &conv.spec)
}

pub fn dwpw(x: &Map, unit: &DwPw) -> Map {
    conv_layer(&conv_layer(x, &unit.dw).map(relu), &unit.pw)
}

/// Plane 0 is the channel mean, plane 1 the channel max.
pub fn channel_pool(x: &Map) -> Map {
    let mut out = Map::zeros(2, x.h, x.w);
    for y in 0..x.h {
        for xx in 0..x.w {
            let vals: Vec<f64> = (0..x.c).map(|c| x.at(c, y, xx)).collect();
            *out.at_mut(0, y, xx) = vals.iter().sum::<f64>() / x.c as f64;
            *out.at_mut(1, y, xx) = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    out
}

/// Direct double-sum forward DFT per channel, unnormalized.
pub fn dft_oracle(x: &Map) -> (Map, Map) {
    let (h, w) = (x.h, x.w);
    let mut re = Map::zeros(x.c, h, w);
    let mut im = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * PI * (((u * y) % h) as f64 / h as f64 + ((v * xx) % w) as f64 / w as f64);
                        sr += x.at(c, y, xx) * ang.cos();
                        si += x.at(c, y, xx) * ang.sin();
                    }
                }
                *re.at_mut(c, u, v) = sr;
                *im.at_mut(c, u, v) = si;
            }
        }
    }
    (re, im)
}

/// Direct inverse DFT with the `1/(H·W)` factor; returns (real, imaginary) parts.
pub fn idft_oracle(re: &Map, im: &Map) -> (Map, Map) {
    let (h, w) = (re.h, re.w);
    let mut out_re = Map::zeros(re.c, h, w);
    let mut out_im = Map::zeros(re.c, h, w);
    let n = (h * w) as f64;
    for c in 0..re.c {
        for y in 0..h {
            for x in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for u in 0..h {
                    for v in 0..w {
                        let ang = 2.0 * PI * (((u * y) % h) as f64 / h as f64 + ((v * x) % w) as f64 / w as f64);
                        let (a, b) = (re.at(c, u, v), im.at(c, u, v));
                        sr += a * ang.cos() - b * ang.sin();
                        si += a * ang.sin() + b * ang.cos();
                    }
                }
                *out_re.at_mut(c, y, x) = sr / n;
                *out_im.at_mut(c, y, x) = si / n;
            }
        }
    }
    (out_re, out_im)
}

/// Amplitude and phase of a real image's spectrum, phase in `(-π, π]`.
///
/// Bins whose frequency is its own negative (DC and Nyquist rows/columns) are
/// real for real input, so their imaginary part is set to exactly zero.
pub fn polar_oracle(x: &Map) -> (Map, Map) {
    let (re, mut im) = dft_oracle(x);
    for c in 0..x.c {
        for u in 0..x.h {
            for v in 0..x.w {
                if (2 * u) % x.h == 0 && (2 * v) % x.w == 0 {
                    *im.at_mut(c, u, v) = 0.0;
                }
            }
        }
    }
    let amp = re.zip(&im, f64::hypot);
    let phase = re.zip(&im, |a, b| if a == 0.0 && b == 0.0 { 0.0 } else { b.atan2(a) });
    (amp, phase)
}

/// Frequency enhancement written out step by step.
pub fn freq_enhance_oracle(fe: &FreqEnhance, x: &Tensor) -> Map {
    let x = Map::from_tensor(x);
    let (amp, phase) = polar_oracle(&x);
    let amp1 = dwpw(&amp, &fe.amp).map(relu);
    let m_a = dwpw(&channel_pool(&amp1), &fe.amp_attn).map(sigmoid);
    let amp2 = amp1.mul_plane(&m_a);
    let amp_res = amp2.zip(&amp, |a, b| a - b);
    let phase1 = dwpw(&phase.concat(&amp_res), &fe.phase).map(sigmoid);
    let m_p = dwpw(&channel_pool(&phase1), &fe.phase_attn).map(sigmoid);
    let phase3 = phase1.mul_plane(&m_p).map(|v| 2.0 * PI * v - PI);
    let re = amp2.zip(&phase3, |a, p| a * p.cos());
    let im = amp2.zip(&phase3, |a, p| a * p.sin());
    let (back, _) = idft_oracle(&re, &im);
    x.zip(&back, |a, b| a + b)
}

/// Non-local block evaluated position by position.
pub fn non_local_oracle(nl: &NonLocal, x: &Tensor) -> Map {
    let x = Map::from_tensor(x);
    let q = conv_layer(&x, &nl.query);
    let k = conv_layer(&x, &nl.key);
    let v = conv_layer(&x, &nl.value);
    let n = x.h * x.w;
    let pos = |i: usize| (i / x.w, i % x.w);
    let mut out = x.clone();
    for i in 0..n {
        let (yi, xi) = pos(i);
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                let (yj, xj) = pos(j);
                (0..q.c).map(|d| q.at(d, yi, xi) * k.at(d, yj, xj)).sum::<f64>() / (nl.cfg.d as f64).sqrt()
            })
            .collect();
        let a = softmax(&logits);
        for c in 0..x.c {
            let read: f64 = (0..n).map(|j| a[j] * v.at(c, pos(j).0, pos(j).1)).sum();
            *out.at_mut(c, yi, xi) += nl.cfg.gamma as f64 * read;
        }
    }
    out
}

fn linear(tokens: &[Vec<f64>], l: &Linear) -> Vec<Vec<f64>> {
    let (i_dim, o_dim) = (l.weight.shape()[0], l.weight.shape()[1]);
    tokens
        .iter()
        .map(|t| {
            (0..o_dim)
                .map(|o| l.bias.data()[o] as f64 + (0..i_dim).map(|i| t[i] * l.weight.data()[i * o_dim + o] as f64).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(tokens: &[Vec<f64>], ln: &LayerNorm) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            t.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * ln.gamma.data()[i] as f64 + ln.beta.data()[i] as f64)
                .collect()
        })
        .collect()
}

/// Multi-head attention over one window's tokens; also returns each head's matrix.
pub fn window_attention_oracle(tokens: &[Vec<f64>], branch: &SwinBranch) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let attn = &branch.attn;
    let e = tokens[0].len();
    let dh = e / attn.heads;
    let qkv = linear(tokens, &attn.qkv);
    let n = tokens.len();
    let mut merged = vec![vec![0.0; e]; n];
    let mut maps = Vec::new();
    for h in 0..attn.heads {
        let mut map = Vec::new();
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|d| qkv[i][h * dh + d] * qkv[j][e + h * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let a = softmax(&logits);
            for d in 0..dh {
                merged[i][h * dh + d] = (0..n).map(|j| a[j] * qkv[j][2 * e + h * dh + d]).sum();
            }
            map.push(a);
        }
        maps.push(map);
    }
    (linear(&merged, &attn.proj), maps)
}

/// The windowed transformer branch, each window handled independently.
pub fn swin_oracle(branch: &SwinBranch, x: &Tensor) -> Map {
    let emb = conv_layer(&Map::from_tensor(x), &branch.embed);
    let ws = branch.cfg.window;
    let mut mixed = Map::zeros(emb.c, emb.h, emb.w);
    for wy in 0..emb.h.div_ceil(ws) {
        for wx in 0..emb.w.div_ceil(ws) {
            let coords: Vec<(usize, usize)> = (0..ws * ws).map(|t| (wy * ws + t / ws, wx * ws + t % ws)).collect();
            let tokens: Vec<Vec<f64>> = coords
                .iter()
                .map(|&(y, x)| {
                    (0..emb.c)
                        .map(|c| if y < emb.h && x < emb.w { emb.at(c, y, x) } else { 0.0 })
                        .collect()
                })
                .collect();
            let (attended, _) = window_attention_oracle(&layer_norm(&tokens, &branch.norm1), branch);
            let mid: Vec<Vec<f64>> = tokens.iter().zip(&attended).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
            let hidden: Vec<Vec<f64>> = linear(&layer_norm(&mid, &branch.norm2), &branch.fc1)
                .into_iter()
                .map(|r| r.into_iter().map(silu).collect())
                .collect();
            let out = linear(&hidden, &branch.fc2);
            for (t, &(y, x)) in coords.iter().enumerate() {
                if y < emb.h && x < emb.w {
                    for c in 0..emb.c {
                        *mixed.at_mut(c, y, x) = mid[t][c] + out[t][c];
                    }
                }
            }
        }
    }
    conv_layer(&mixed, &branch.out)
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0);
    let (bx1, by1, bx2, by2) = (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy NMS by repeated arg-max over the remaining candidates.
pub fn nms_oracle(boxes: &[BBox], iou: f64, conf: f64) -> Vec<BBox> {
    let mut alive: Vec<bool> = boxes.iter().map(|b| b.score > conf).collect();
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.map_or(true, |b| boxes[i].score > boxes[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(boxes[b]);
        for i in 0..boxes.len() {
            if alive[i] && iou_oracle(&boxes[b], &boxes[i]) > iou {
                alive[i] = false;
            }
        }
    }
    kept
}

/// All-point AP by walking the ranking: each true positive contributes
/// `1/n_gt` of recall at the best precision reachable at that rank or deeper.
/// Scores must be distinct.
pub fn ap_oracle(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let precision_at: Vec<f64> = (0..ranked.len())
        .map(|k| ranked[..=k].iter().filter(|r| r.1).count() as f64 / (k + 1) as f64)
        .collect();
    let mut ap = 0.0;
    for k in 0..ranked.len() {
        if ranked[k].1 {
            let best = precision_at[k..].iter().cloned().fold(0.0, f64::max);
            ap += best / n_gt as f64;
        }
    }
    ap
}
