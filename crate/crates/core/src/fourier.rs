//! 2D discrete Fourier transform and amplitude/phase decomposition.
//!
//! The forward transform is unnormalized, the inverse carries `1/(H·W)`.
//! Spectra are held in `f64` so that round trips through the frequency
//! domain stay well below single-precision feature noise.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which algorithm computes the 2D transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DftPath {
    /// Radix-2 FFT when both extents are powers of two, direct summation otherwise.
    Auto,
    /// Row/column iterative radix-2 FFT; both extents must be powers of two.
    Fft,
    /// Direct double sum over all pixels for every bin.
    Direct,
}

/// Per-channel complex spectrum, bin `(u, v)` at `[c, u, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMap {
    shape: [usize; 3],
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMap {
    pub fn new(shape: [usize; 3], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if re.len() != n || im.len() != n {
            return Err(Error::shape(
                "complex_map",
                format!("shape {shape:?} needs {n} bins, got re {} / im {}", re.len(), im.len()),
            ));
        }
        Ok(Self { shape, re, im })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn bin(&self, c: usize, u: usize, v: usize) -> Complex64 {
        let i = (c * self.shape[1] + u) * self.shape[2] + v;
        Complex64::new(self.re[i], self.im[i])
    }

    fn planes(&self) -> impl Iterator<Item = Vec<Complex64>> + '_ {
        let hw = self.shape[1] * self.shape[2];
        (0..self.shape[0]).map(move |c| {
            (c * hw..(c + 1) * hw)
                .map(|i| Complex64::new(self.re[i], self.im[i]))
                .collect()
        })
    }
}

/// Amplitude/phase view of a spectrum; phase lies in `(-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarMap {
    shape: [usize; 3],
    pub amp: Vec<f64>,
    pub phase: Vec<f64>,
}

impl PolarMap {
    pub fn new(shape: [usize; 3], amp: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if amp.len() != n || phase.len() != n {
            return Err(Error::shape(
                "polar_map",
                format!("shape {shape:?} needs {n} bins, got amp {} / phase {}", amp.len(), phase.len()),
            ));
        }
        Ok(Self { shape, amp, phase })
    }

    /// Builds a polar map from single-precision feature tensors.
    pub fn from_tensors(amp: &Tensor, phase: &Tensor) -> Result<Self> {
        let (c, h, w) = amp.dims3()?;
        if phase.shape() != amp.shape() {
            return Err(Error::shape(
                "polar_map",
                format!("amplitude {:?} vs phase {:?}", amp.shape(), phase.shape()),
            ));
        }
        let widen = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect();
        Self::new([c, h, w], widen(amp), widen(phase))
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn amp_tensor(&self) -> Tensor {
        narrow(self.shape, &self.amp)
    }

    pub fn phase_tensor(&self) -> Tensor {
        narrow(self.shape, &self.phase)
    }
}

fn narrow(shape: [usize; 3], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect()).expect("length checked at construction")
}

/// `exp(sign · j2πk/n)`, exact at multiples of a quarter turn.
fn twiddle(k: usize, n: usize, sign: f64) -> Complex64 {
    let k = k % n;
    if (4 * k) % n == 0 {
        return match 4 * k / n {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, sign),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -sign),
        };
    }
    let angle = sign * 2.0 * PI * k as f64 / n as f64;
    Complex64::new(angle.cos(), angle.sin())
}

/// In-place iterative radix-2 FFT of a power-of-two length buffer (unnormalized).
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length, got {n}");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let table: Vec<Complex64> = (0..n / 2).map(|k| twiddle(k, n, sign)).collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let u = buf[start + j];
                let v = buf[start + j + half] * table[j * step];
                buf[start + j] = u + v;
                buf[start + j + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn fft_plane(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    for row in plane.chunks_mut(w) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        fft_in_place(&mut col, inverse);
        for y in 0..h {
            plane[y * w + x] = col[y];
        }
    }
}

fn direct_plane(plane: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let th: Vec<Complex64> = (0..h).map(|k| twiddle(k, h, sign)).collect();
    let tw: Vec<Complex64> = (0..w).map(|k| twiddle(k, w, sign)).collect();
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                let ry = th[(y * u) % h];
                for x in 0..w {
                    acc += plane[y * w + x] * (ry * tw[(x * v) % w]);
                }
            }
            out.push(acc);
        }
    }
    out
}

fn resolve(path: DftPath, h: usize, w: usize) -> Result<bool> {
    let pow2 = h.is_power_of_two() && w.is_power_of_two();
    match path {
        DftPath::Auto => Ok(pow2),
        DftPath::Direct => Ok(false),
        DftPath::Fft if pow2 => Ok(true),
        DftPath::Fft => Err(Error::shape(
            "dft2",
            format!("FFT path needs power-of-two extents, got {h}x{w}"),
        )),
    }
}

fn transform(planes: impl Iterator<Item = Vec<Complex64>>, shape: [usize; 3], path: DftPath, inverse: bool) -> Result<ComplexMap> {
    let [c, h, w] = shape;
    if h == 0 || w == 0 {
        return Err(Error::shape("dft2", format!("empty spatial extent {h}x{w}")));
    }
    let use_fft = resolve(path, h, w)?;
    let scale = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
    let mut re = Vec::with_capacity(c * h * w);
    let mut im = Vec::with_capacity(c * h * w);
    for mut plane in planes {
        if use_fft {
            fft_plane(&mut plane, h, w, inverse);
        } else {
            plane = direct_plane(&plane, h, w, inverse);
        }
        for z in plane {
            re.push(z.re * scale);
            im.push(z.im * scale);
        }
    }
    ComplexMap::new(shape, re, im)
}

/// Forward 2D DFT of every channel of a `[C,H,W]` tensor.
pub fn dft2(x: &Tensor) -> Result<ComplexMap> {
    dft2_with(x, DftPath::Auto)
}

pub fn dft2_with(x: &Tensor, path: DftPath) -> Result<ComplexMap> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let planes = (0..c).map(|ch| {
        x.data()[ch * hw..(ch + 1) * hw]
            .iter()
            .map(|&v| Complex64::new(v as f64, 0.0))
            .collect()
    });
    transform(planes, [c, h, w], path, false)
}

/// Inverse 2D DFT keeping the full complex result.
pub fn idft2_complex(spec: &ComplexMap, path: DftPath) -> Result<ComplexMap> {
    transform(spec.planes(), spec.shape, path, true)
}

/// Inverse 2D DFT, returning the real part.
pub fn idft2(spec: &ComplexMap) -> Result<Tensor> {
    let z = idft2_complex(spec, DftPath::Auto)?;
    Ok(narrow(z.shape, &z.re))
}

/// Amplitude and full-quadrant phase; a zero bin has phase 0.
pub fn to_polar(spec: &ComplexMap) -> PolarMap {
    let (amp, phase) = spec
        .re
        .iter()
        .zip(&spec.im)
        .map(|(&re, &im)| {
            // Fold -0.0 into +0.0 so purely real negative bins get phase +π.
            let im = if im == 0.0 { 0.0 } else { im };
            let amp = re.hypot(im);
            let phase = if amp == 0.0 { 0.0 } else { im.atan2(re) };
            (amp, phase)
        })
        .unzip();
    PolarMap {
        shape: spec.shape,
        amp,
        phase,
    }
}

pub fn from_polar(p: &PolarMap) -> ComplexMap {
    let (re, im) = p
        .amp
        .iter()
        .zip(&p.phase)
        .map(|(&a, &ph)| (a * ph.cos(), a * ph.sin()))
        .unzip();
    ComplexMap {
        shape: p.shape,
        re,
        im,
    }
}
