//! Dense row-major `f32` tensors and the primitives the feature modules are
//! built from.
//!
//! Reductions always run in a fixed left-to-right order so that identical
//! inputs give bitwise-identical outputs.

mod conv;

pub use conv::{
    batch_norm, channel_pool, conv2d, pool2d, resize_nearest, upsample_nearest, ConvSpec, PoolMode,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} implies {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                "dims3",
                format!("expected rank 3 [C,H,W], got shape {:?}", self.shape),
            )),
        }
    }

    /// `(T, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [t, c, h, w] => Ok((t, c, h, w)),
            _ => Err(Error::shape(
                "dims4",
                format!("expected rank 4 [T,C,H,W], got shape {:?}", self.shape),
            )),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Sub-tensor at index `i` of the leading axis.
    pub fn index0(&self, i: usize) -> Result<Tensor> {
        let Some((&n, rest)) = self.shape.split_first() else {
            return Err(Error::shape("index0", "scalar has no leading axis"));
        };
        if i >= n {
            return Err(Error::shape(
                "index0",
                format!("index {i} out of range for leading extent {n}"),
            ));
        }
        let step: usize = rest.iter().product();
        Ok(Tensor {
            shape: rest.to_vec(),
            data: self.data[i * step..(i + 1) * step].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(xs: &[Tensor]) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.len() * xs.len());
        for (i, x) in xs.iter().enumerate() {
            if x.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("tensor {i} has shape {:?}, expected {:?}", x.shape, first.shape),
                ));
            }
            data.extend_from_slice(&x.data);
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Concatenates along `axis`; every other axis must agree.
    pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no tensors to concatenate"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for rank {rank}"),
            ));
        }
        for (i, x) in xs.iter().enumerate() {
            if x.rank() != rank {
                return Err(Error::shape(
                    "concat",
                    format!("tensor {i} has rank {}, expected {rank}", x.rank()),
                ));
            }
            for d in (0..rank).filter(|&d| d != axis) {
                if x.shape[d] != first.shape[d] {
                    return Err(Error::shape(
                        "concat",
                        format!(
                            "tensor {i} has extent {} on axis {d}, expected {}",
                            x.shape[d], first.shape[d]
                        ),
                    ));
                }
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = xs.iter().map(|x| x.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for x in xs {
                let chunk = x.shape[axis] * inner;
                data.extend_from_slice(&x.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Tensor { shape, data })
    }

    /// Merges the leading two axes: `[T,C,H,W]` becomes `[T*C,H,W]`.
    pub fn flatten_frames(&self) -> Result<Tensor> {
        let (t, c, h, w) = self.dims4()?;
        self.clone().reshape(&[t * c, h, w])
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("operands {:?} and {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f32) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn relu(&self) -> Tensor {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn silu(&self) -> Tensor {
        self.map(silu)
    }

    pub fn prelu(&self, slope: f32) -> Tensor {
        self.map(|v| prelu(v, slope))
    }

    /// Multiplies every `[H,W]` plane of a `[C,H,W]` tensor by a single-plane map.
    pub fn mul_plane(&self, plane: &Tensor) -> Result<Tensor> {
        let (c, h, w) = self.dims3()?;
        if plane.shape() != [1, h, w] && plane.shape() != [h, w] {
            return Err(Error::shape(
                "mul_plane",
                format!("map {:?} does not broadcast over {:?}", plane.shape, self.shape),
            ));
        }
        let hw = h * w;
        let mut out = self.clone();
        for ch in 0..c {
            for (v, &m) in out.data[ch * hw..(ch + 1) * hw].iter_mut().zip(&plane.data) {
                *v *= m;
            }
        }
        Ok(out)
    }

    /// Multiplies each channel of a `[C,H,W]` tensor by its own scalar.
    pub fn mul_channels(&self, scales: &[f32]) -> Result<Tensor> {
        let (c, h, w) = self.dims3()?;
        if scales.len() != c {
            return Err(Error::shape(
                "mul_channels",
                format!("{} scales for {c} channels", scales.len()),
            ));
        }
        let hw = h * w;
        let mut out = self.clone();
        for (chunk, &s) in out.data.chunks_mut(hw).zip(scales) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose2d")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {k} vs {k2}"),
            ));
        }
        // Row-axpy form: each output element still accumulates over k in order.
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let out = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", self.shape),
            ));
        }
        let n = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = self.clone();
        let mut lane = vec![0.0f32; n];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                for (k, v) in lane.iter_mut().enumerate() {
                    *v = self.data[at(k)];
                }
                softmax_in_place(&mut lane);
                for (k, &v) in lane.iter().enumerate() {
                    out.data[at(k)] = v;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn relu(v: f32) -> f32 {
    v.max(0.0)
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(v: f32) -> f32 {
    v * sigmoid(v)
}

pub fn prelu(v: f32, slope: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

/// Numerically stable softmax over a contiguous lane.
pub fn softmax_in_place(lane: &mut [f32]) {
    let max = lane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in lane.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in lane.iter_mut() {
        *v /= sum;
    }
}
