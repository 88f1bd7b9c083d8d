//! Local-global frequency-aware branch.
//!
//! Each frame's features go through Fourier-domain amplitude and phase
//! attention and return to the spatial domain as a residual. The enhanced
//! frames are then concatenated and read by a convolutional (local) branch
//! and a windowed self-attention (global) branch.

use std::f32::consts::PI;

use crate::error::{Error, Result};
use crate::fourier::{self, PolarMap};
use crate::layers::{Act, Conv, ConvBnAct, LayerNorm, Linear};
use crate::tensor::{self, softmax_in_place, ConvSpec, Tensor};
use crate::weights::Params;

/// Depth-wise 3×3 then point-wise 1×1 conv, the unit every attention path uses.
#[derive(Debug, Clone)]
pub struct DwPw {
    pub dw: Conv,
    pub pw: Conv,
}

impl DwPw {
    pub fn build(p: &mut Params, prefix: &str, channels: usize, out: usize) -> Result<Self> {
        Ok(Self {
            dw: Conv::build(p, &format!("{prefix}.dw"), ConvSpec::depthwise(channels, 3))?,
            pw: Conv::build(p, &format!("{prefix}.pw"), ConvSpec::pointwise(channels, out))?,
        })
    }

    /// `PW(ReLU(DW(x)))`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.pw.forward(&self.dw.forward(x)?.relu())
    }
}

/// Intermediate maps of one frequency-enhancement pass.
#[derive(Debug, Clone)]
pub struct FreqTrace {
    pub amp: Tensor,
    pub phase: Tensor,
    pub amp_attn: Tensor,
    pub refined_amp: Tensor,
    pub phase_attn: Tensor,
    /// Phase after rescaling to `(-π, π)`.
    pub out_phase: Tensor,
    pub out: Tensor,
}

#[derive(Debug, Clone)]
pub struct FreqEnhance {
    pub amp: DwPw,
    pub amp_attn: DwPw,
    pub phase: DwPw,
    pub phase_attn: DwPw,
}

impl FreqEnhance {
    pub fn build(p: &mut Params, prefix: &str, channels: usize) -> Result<Self> {
        let c = channels;
        Ok(Self {
            amp: DwPw::build(p, &format!("{prefix}.amp"), c, c)?,
            amp_attn: DwPw::build(p, &format!("{prefix}.amp_attn"), 2, 1)?,
            phase: DwPw::build(p, &format!("{prefix}.phase"), 2 * c, c)?,
            phase_attn: DwPw::build(p, &format!("{prefix}.phase_attn"), 2, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.out)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<FreqTrace> {
        let polar = fourier::to_polar(&fourier::dft2(x)?);
        let amp = polar.amp_tensor();
        let phase = polar.phase_tensor();

        let amp1 = self.amp.forward(&amp)?.relu();
        let amp_attn = self.amp_attn.forward(&tensor::channel_pool(&amp1)?)?.sigmoid();
        let refined_amp = amp1.mul_plane(&amp_attn)?;
        let amp_residual = refined_amp.sub(&amp)?;

        let phase1 = self
            .phase
            .forward(&Tensor::concat(&[&phase, &amp_residual], 0)?)?
            .sigmoid();
        let phase_attn = self.phase_attn.forward(&tensor::channel_pool(&phase1)?)?.sigmoid();
        let out_phase = phase1.mul_plane(&phase_attn)?.map(|v| 2.0 * PI * v - PI);

        let out = recompose_residual(x, &PolarMap::from_tensors(&refined_amp, &out_phase)?)?;
        Ok(FreqTrace {
            amp,
            phase,
            amp_attn,
            refined_amp,
            phase_attn,
            out_phase,
            out,
        })
    }
}

/// `x + Re(idft2(A·cos φ + j·A·sin φ))`.
pub fn recompose_residual(x: &Tensor, polar: &PolarMap) -> Result<Tensor> {
    let back = fourier::idft2(&fourier::from_polar(polar))?;
    x.add(&back)
}

/// Two stride-1 3×3 conv blocks (BN, SiLU) over the concatenated frames.
#[derive(Debug, Clone)]
pub struct ConvBranch {
    pub conv1: ConvBnAct,
    pub conv2: ConvBnAct,
}

impl ConvBranch {
    pub fn build(p: &mut Params, prefix: &str, in_channels: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: ConvBnAct::build(p, &format!("{prefix}.conv1"), ConvSpec::same(in_channels, channels, 3), Act::Silu)?,
            conv2: ConvBnAct::build(p, &format!("{prefix}.conv2"), ConvSpec::same(channels, channels, 3), Act::Silu)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv2.forward(&self.conv1.forward(x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowAttnConfig {
    pub window: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_hidden: usize,
}

impl WindowAttnConfig {
    pub fn new(window: usize, heads: usize, embed_dim: usize) -> Self {
        Self {
            window,
            heads,
            embed_dim,
            mlp_hidden: 2 * embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.heads == 0 || self.embed_dim == 0 {
            return Err(Error::Config("window, heads and embed_dim must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Multi-head self-attention over the tokens of one window.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub heads: usize,
    pub qkv: Linear,
    pub proj: Linear,
}

impl WindowAttention {
    /// Attends `[N, E]` tokens; also returns each head's `[N, N]` attention matrix.
    pub fn forward(&self, tokens: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let n = tokens.shape()[0];
        let e = self.proj.bias.len();
        let dh = e / self.heads;
        let qkv = self.qkv.forward(tokens)?;
        let q = qkv.data();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut merged = vec![0.0f32; n * e];
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qo, ko, vo) = (h * dh, e + h * dh, 2 * e + h * dh);
            let mut attn = vec![0.0f32; n * n];
            for i in 0..n {
                let row = &mut attn[i * n..(i + 1) * n];
                for (j, r) in row.iter_mut().enumerate() {
                    let mut dot = 0.0f32;
                    for d in 0..dh {
                        dot += q[i * 3 * e + qo + d] * q[j * 3 * e + ko + d];
                    }
                    *r = dot * scale;
                }
                softmax_in_place(row);
            }
            for i in 0..n {
                for j in 0..n {
                    let a = attn[i * n + j];
                    for d in 0..dh {
                        merged[i * e + qo + d] += a * q[j * 3 * e + vo + d];
                    }
                }
            }
            maps.push(Tensor::new(vec![n, n], attn)?);
        }
        let out = self.proj.forward(&Tensor::new(vec![n, e], merged)?)?;
        Ok((out, maps))
    }
}

/// One non-shifted windowed transformer block between 1×1 input/output projections.
#[derive(Debug, Clone)]
pub struct SwinBranch {
    pub cfg: WindowAttnConfig,
    pub embed: Conv,
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub out: Conv,
}

impl SwinBranch {
    pub fn build(p: &mut Params, prefix: &str, in_channels: usize, channels: usize, cfg: WindowAttnConfig) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embed_dim;
        Ok(Self {
            cfg,
            embed: Conv::build(p, &format!("{prefix}.embed"), ConvSpec::pointwise(in_channels, e))?,
            norm1: LayerNorm::build(p, &format!("{prefix}.norm1"), e)?,
            attn: WindowAttention {
                heads: cfg.heads,
                qkv: Linear::build(p, &format!("{prefix}.qkv"), e, 3 * e)?,
                proj: Linear::build(p, &format!("{prefix}.proj"), e, e)?,
            },
            norm2: LayerNorm::build(p, &format!("{prefix}.norm2"), e)?,
            fc1: Linear::build(p, &format!("{prefix}.fc1"), e, cfg.mlp_hidden)?,
            fc2: Linear::build(p, &format!("{prefix}.fc2"), cfg.mlp_hidden, e)?,
            out: Conv::build(p, &format!("{prefix}.out"), ConvSpec::pointwise(e, channels))?,
        })
    }

    /// Transformer block on one window's `[N, E]` tokens.
    pub fn block(&self, tokens: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (attended, maps) = self.attn.forward(&self.norm1.forward(tokens)?)?;
        let x = tokens.add(&attended)?;
        let hidden = self.fc1.forward(&self.norm2.forward(&x)?)?.silu();
        Ok((x.add(&self.fc2.forward(&hidden)?)?, maps))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    /// Output plus every window's per-head attention matrices, in window raster order.
    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
        let embedded = self.embed.forward(x)?;
        let (e, h, w) = embedded.dims3()?;
        let ws = self.cfg.window;
        let (hp, wp) = (h.div_ceil(ws) * ws, w.div_ceil(ws) * ws);
        let src = embedded.data();
        let mut mixed = vec![0.0f32; e * h * w];
        let mut all_maps = Vec::new();
        for wy in 0..hp / ws {
            for wx in 0..wp / ws {
                let n = ws * ws;
                let mut tokens = vec![0.0f32; n * e];
                for ty in 0..ws {
                    for tx in 0..ws {
                        let (y, xx) = (wy * ws + ty, wx * ws + tx);
                        if y < h && xx < w {
                            for c in 0..e {
                                tokens[(ty * ws + tx) * e + c] = src[(c * h + y) * w + xx];
                            }
                        }
                    }
                }
                let (out, maps) = self.block(&Tensor::new(vec![n, e], tokens)?)?;
                for ty in 0..ws {
                    for tx in 0..ws {
                        let (y, xx) = (wy * ws + ty, wx * ws + tx);
                        if y < h && xx < w {
                            for c in 0..e {
                                mixed[(c * h + y) * w + xx] = out.data()[(ty * ws + tx) * e + c];
                            }
                        }
                    }
                }
                all_maps.push(maps);
            }
        }
        let out = self.out.forward(&Tensor::new(vec![e, h, w], mixed)?)?;
        Ok((out, all_maps))
    }
}

/// The full frequency branch over a `[T,C,H,W]` window.
#[derive(Debug, Clone)]
pub struct Lgfm {
    pub freq: FreqEnhance,
    pub local: ConvBranch,
    pub global: SwinBranch,
}

impl Lgfm {
    pub fn build(p: &mut Params, prefix: &str, frames: usize, channels: usize, attn: WindowAttnConfig) -> Result<Self> {
        let stacked = frames * channels;
        Ok(Self {
            freq: FreqEnhance::build(p, &format!("{prefix}.freq"), channels)?,
            local: ConvBranch::build(p, &format!("{prefix}.local"), stacked, channels)?,
            global: SwinBranch::build(p, &format!("{prefix}.global"), stacked, channels, attn)?,
        })
    }

    /// Frequency-enhanced frames concatenated on channels: `[T·C, H, W]`.
    pub fn enhance_frames(&self, window: &Tensor) -> Result<Tensor> {
        let (t, ..) = window.dims4()?;
        let frames = (0..t)
            .map(|i| self.freq.forward(&window.index0(i)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&frames)?.flatten_frames()
    }

    /// Returns `(F_lf, F_gf)`.
    pub fn forward(&self, window: &Tensor) -> Result<(Tensor, Tensor)> {
        let stacked = self.enhance_frames(window)?;
        Ok((self.local.forward(&stacked)?, self.global.forward(&stacked)?))
    }
}
