//! Memory-enhanced spatial relationship branch: reference-frame gating,
//! non-local attention over the keyframe, and a key-value memory read.

use crate::error::{Error, Result};
use crate::layers::{Act, Conv, ConvBnAct};
use crate::tensor::{ConvSpec, Tensor};
use crate::weights::Params;

/// `[C,H,W]` → `[C, H·W]` (a free reshape).
fn flatten_spatial(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    x.clone().reshape(&[c, h * w])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NabConfig {
    /// Residual weight on the attended values.
    pub gamma: f32,
    /// Query/key channel count; the attention logits are scaled by `1/sqrt(d)`.
    pub d: usize,
}

impl NabConfig {
    pub fn for_channels(channels: usize, gamma: f32) -> Self {
        Self {
            gamma,
            d: (channels / 2).max(1),
        }
    }
}

/// Non-local block: `γ · softmax(QKᵀ/√d) V + x` over all spatial positions.
#[derive(Debug, Clone)]
pub struct NonLocal {
    pub cfg: NabConfig,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
}

impl NonLocal {
    pub fn build(p: &mut Params, prefix: &str, channels: usize, cfg: NabConfig) -> Result<Self> {
        if cfg.d == 0 {
            return Err(Error::Config("attention key width d must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            query: Conv::build(p, &format!("{prefix}.query"), ConvSpec::pointwise(channels, cfg.d))?,
            key: Conv::build(p, &format!("{prefix}.key"), ConvSpec::pointwise(channels, cfg.d))?,
            value: Conv::build(p, &format!("{prefix}.value"), ConvSpec::pointwise(channels, channels))?,
        })
    }

    /// Row-stochastic `[N, N]` attention; row `i` is the query at position `i`.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let q = flatten_spatial(&self.query.forward(x)?)?.transpose2d()?;
        let k = flatten_spatial(&self.key.forward(x)?)?;
        let scale = 1.0 / (self.cfg.d as f32).sqrt();
        q.matmul(&k)?.scale(scale).softmax(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.dims3()?;
        let attn = self.attention(x)?;
        let v = flatten_spatial(&self.value.forward(x)?)?;
        // out[c, i] = Σ_j attn[i, j] v[c, j]
        let attended = v.matmul(&attn.transpose2d()?)?.reshape(&[c, h, w])?;
        x.add(&attended.scale(self.cfg.gamma))
    }
}

/// Memory attention on flattened maps.
///
/// `keys_mem` is `[Ck, Nm]`, `keys_query` is `[Ck, Nq]`, `values_mem` is
/// `[Cv, Nm]`. Returns the similarity matrix `[Nm, Nq]`, normalized over the
/// memory axis, and the read-out `[Cv, Nq]`.
pub fn memory_attention(keys_mem: &Tensor, keys_query: &Tensor, values_mem: &Tensor) -> Result<(Tensor, Tensor)> {
    let (km, nm) = match keys_mem.shape() {
        [a, b] => (*a, *b),
        s => return Err(Error::shape("memory_read", format!("memory keys must be a matrix, got {s:?}"))),
    };
    if keys_query.rank() != 2 || keys_query.shape()[0] != km {
        return Err(Error::shape(
            "memory_read",
            format!("key channels differ: memory {km}, query {:?}", keys_query.shape()),
        ));
    }
    if values_mem.rank() != 2 || values_mem.shape()[1] != nm {
        return Err(Error::shape(
            "memory_read",
            format!("memory values {:?} do not cover {nm} positions", values_mem.shape()),
        ));
    }
    let similarity = keys_mem.transpose2d()?.matmul(keys_query)?.softmax(0)?;
    let read = values_mem.matmul(&similarity)?;
    Ok((similarity, read))
}

/// Key-value memory unit: keyframe features query memory built from the
/// attended features, then a 1×1 "matching" conv merges read-out and query values.
#[derive(Debug, Clone)]
pub struct MemoryRead {
    pub query_key: Conv,
    pub query_value: Conv,
    pub memory_key: Conv,
    pub memory_value: Conv,
    pub matching: Conv,
}

impl MemoryRead {
    pub fn build(p: &mut Params, prefix: &str, channels: usize) -> Result<Self> {
        let half = (channels / 2).max(1);
        let pw = |p: &mut Params, name: &str, o| Conv::build(p, &format!("{prefix}.{name}"), ConvSpec::pointwise(channels, o));
        Ok(Self {
            query_key: pw(p, "query_key", half)?,
            query_value: pw(p, "query_value", half)?,
            memory_key: pw(p, "memory_key", half)?,
            memory_value: pw(p, "memory_value", half)?,
            matching: Conv::build(p, &format!("{prefix}.matching"), ConvSpec::pointwise(2 * half, channels))?,
        })
    }

    /// Similarity matrix `[Nm, Nq]` between memory (`global`) and query (`keyframe`).
    pub fn similarity(&self, keyframe: &Tensor, global: &Tensor) -> Result<Tensor> {
        let kq = flatten_spatial(&self.query_key.forward(keyframe)?)?;
        let km = flatten_spatial(&self.memory_key.forward(global)?)?;
        let vm = flatten_spatial(&self.memory_value.forward(global)?)?;
        Ok(memory_attention(&km, &kq, &vm)?.0)
    }

    pub fn forward(&self, keyframe: &Tensor, global: &Tensor) -> Result<Tensor> {
        let (_, h, w) = keyframe.dims3()?;
        let kq = flatten_spatial(&self.query_key.forward(keyframe)?)?;
        let vq = self.query_value.forward(keyframe)?;
        let km = flatten_spatial(&self.memory_key.forward(global)?)?;
        let vm = flatten_spatial(&self.memory_value.forward(global)?)?;
        let (_, read) = memory_attention(&km, &kq, &vm)?;
        let cv = read.shape()[0];
        let read = read.reshape(&[cv, h, w])?;
        self.matching.forward(&Tensor::concat(&[&read, &vq], 0)?)
    }
}

/// The full branch over a `[T,C,H,W]` window; the last frame is the keyframe.
#[derive(Debug, Clone)]
pub struct Msrm {
    pub gate: Conv,
    pub merge: ConvBnAct,
    pub nab: NonLocal,
    pub memory: MemoryRead,
}

impl Msrm {
    pub fn build(p: &mut Params, prefix: &str, frames: usize, channels: usize, gamma: f32) -> Result<Self> {
        if frames < 2 {
            return Err(Error::Config(format!("memory branch needs T >= 2, got {frames}")));
        }
        let c = channels;
        Ok(Self {
            gate: Conv::build(p, &format!("{prefix}.gate"), ConvSpec::same((frames - 1) * c, c, 3))?,
            merge: ConvBnAct::build(p, &format!("{prefix}.merge"), ConvSpec::same(2 * c, c, 3), Act::Silu)?,
            nab: NonLocal::build(p, &format!("{prefix}.nab"), c, NabConfig::for_channels(c, gamma))?,
            memory: MemoryRead::build(p, &format!("{prefix}.meu"), c)?,
        })
    }

    fn split(window: &Tensor) -> Result<(Tensor, Tensor)> {
        let (t, c, h, w) = window.dims4()?;
        if t < 2 {
            return Err(Error::shape("msrm", format!("window needs T >= 2 frames, got {t}")));
        }
        let refs = Tensor::new(vec![(t - 1) * c, h, w], window.data()[..(t - 1) * c * h * w].to_vec())?;
        Ok((refs, window.index0(t - 1)?))
    }

    /// Per-pixel sigmoid weights computed from the reference frames.
    pub fn reference_gate(&self, window: &Tensor) -> Result<Tensor> {
        let (refs, _) = Self::split(window)?;
        Ok(self.gate.forward(&refs)?.sigmoid())
    }

    /// Gated keyframe merged with the raw keyframe (local inter-frame relations).
    pub fn fuse_references(&self, window: &Tensor) -> Result<Tensor> {
        let (_, key) = Self::split(window)?;
        let gated = self.reference_gate(window)?.mul(&key)?;
        self.merge.forward(&Tensor::concat(&[&gated, &key], 0)?)
    }

    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        let (_, key) = Self::split(window)?;
        let local = self.fuse_references(window)?;
        let global = self.nab.forward(&local)?;
        self.memory.forward(&key, &global)
    }
}
