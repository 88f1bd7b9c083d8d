use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a square-kernel 2D convolution.
///
/// `groups == in_channels` gives a depth-wise convolution; `kernel == 1`
/// with `groups == 1` is point-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// `k`×`k` convolution, stride 1, "same" zero padding, with bias.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            bias: true,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1)
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self {
            groups: channels,
            ..Self::same(channels, channels, kernel)
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups.max(1),
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups.max(1) * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::shape("conv2d", m));
        if self.groups == 0 || self.in_channels % self.groups != 0 {
            return bad(format!(
                "in_channels {} not divisible by groups {}",
                self.in_channels, self.groups
            ));
        }
        if self.out_channels % self.groups != 0 {
            return bad(format!(
                "out_channels {} not divisible by groups {}",
                self.out_channels, self.groups
            ));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.kernel == 0 {
            return bad("kernel must be at least 1".into());
        }
        Ok(())
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// Zero-padded cross-correlation of a `[C,H,W]` input.
///
/// `weight` is `[C_out, C_in/groups, k, k]`, `bias` is `[C_out]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let (c, h, w) = x.dims3()?;
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input channel dimension is {c}, spec expects {}", spec.in_channels),
        ));
    }
    let wshape = spec.weight_shape();
    if weight.shape() != wshape {
        return Err(Error::shape(
            "conv2d",
            format!("weight shape {:?}, expected {wshape:?}", weight.shape()),
        ));
    }
    match (bias, spec.bias) {
        (Some(b), _) if b.shape() != [spec.out_channels] => {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), spec.out_channels),
            ))
        }
        (None, true) => return Err(Error::shape("conv2d", "spec requires a bias tensor")),
        _ => {}
    }
    let (Some(oh), Some(ow)) = (spec.output_extent(h), spec.output_extent(w)) else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {} larger than padded input height/width {h}x{w}", spec.kernel),
        ));
    };

    let k = spec.kernel;
    let (s, p) = (spec.stride, spec.padding as isize);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; spec.out_channels * oh * ow];

    for (co, plane) in out.chunks_mut(oh * ow).enumerate() {
        let g = co / cout_g;
        for ci_local in 0..cin_g {
            let ci = g * cin_g + ci_local;
            let xplane = &xd[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wd[((co * cin_g + ci_local) * k + ky) * k + kx];
                    // Output columns whose input column falls inside [0, w).
                    let off = kx as isize - p;
                    let ox_lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
                    let ox_hi = if (w as isize) - off <= 0 {
                        0
                    } else {
                        ow.min((((w as isize) - off - 1) as usize) / s + 1)
                    };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &xplane[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let start = (ox_lo as isize + off) as usize;
                            let src = &row[start..start + (ox_hi - ox_lo)];
                            for (o, &v) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * s) as isize + off) as usize;
                                orow[ox] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b.data()[co];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(vec![spec.out_channels, oh, ow], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Unpadded windowed max or mean over each plane of a `[C,H,W]` tensor.
pub fn pool2d(x: &Tensor, mode: PoolMode, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if kernel == 0 || stride == 0 {
        return Err(Error::shape("pool2d", "kernel and stride must be at least 1"));
    }
    if kernel > h || kernel > w {
        return Err(Error::shape(
            "pool2d",
            format!("kernel {kernel} larger than input height/width {h}x{w}"),
        ));
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let area = (kernel * kernel) as f32;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = match mode {
                    PoolMode::Max => f32::NEG_INFINITY,
                    PoolMode::Avg => 0.0,
                };
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let v = plane[(oy * stride + ky) * w + ox * stride + kx];
                        match mode {
                            PoolMode::Max => acc = acc.max(v),
                            PoolMode::Avg => acc += v,
                        }
                    }
                }
                out.push(match mode {
                    PoolMode::Max => acc,
                    PoolMode::Avg => acc / area,
                });
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Per-pixel reduction across channels: plane 0 is the mean, plane 1 the max.
pub fn channel_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if c == 0 {
        return Err(Error::shape("channel_pool", "input has no channels"));
    }
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0f32; 2 * hw];
    let (mean, max) = out.split_at_mut(hw);
    mean.copy_from_slice(&xd[..hw]);
    max.copy_from_slice(&xd[..hw]);
    for ch in 1..c {
        let plane = &xd[ch * hw..(ch + 1) * hw];
        for i in 0..hw {
            mean[i] += plane[i];
            max[i] = max[i].max(plane[i]);
        }
    }
    let inv = c as f32;
    mean.iter_mut().for_each(|v| *v /= inv);
    Tensor::new(vec![2, h, w], out)
}

/// Inference-form batch normalization with stored per-channel statistics.
pub fn batch_norm(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    for (name, v) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        if v.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{name} has length {}, input has {c} channels", v.len()),
            ));
        }
    }
    let hw = h * w;
    let mut out = x.clone();
    for (ch, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let inv = 1.0 / (var[ch] + eps).sqrt();
        for v in plane.iter_mut() {
            *v = (*v - mean[ch]) * inv * gamma[ch] + beta[ch];
        }
    }
    Ok(out)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    if factor == 0 {
        return Err(Error::shape("upsample_nearest", "factor must be at least 1"));
    }
    resize_nearest(x, h * factor, w * factor)
}

/// Nearest-neighbour resize to an explicit extent using `src = floor(dst * in / out)`.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("resize_nearest", "input has an empty spatial axis"));
    }
    let xd = x.data();
    let cols: Vec<usize> = (0..out_w).map(|ox| (ox * w / out_w).min(w - 1)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            let iy = (oy * h / out_h).min(h - 1);
            let row = &xd[(ch * h + iy) * w..(ch * h + iy + 1) * w];
            out.extend(cols.iter().map(|&ix| row[ix]));
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}
