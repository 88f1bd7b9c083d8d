//! Named parameter bundles and their flat binary file format.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "TRDW" version count
//! count × { name_len name_utf8 rank extent×rank payload(f32 LE)×product(extents) }
//! ```

use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TRDW";
pub const VERSION: u32 = 1;

/// Ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor; returns the previous value if the name was taken.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(r.error(0, format!("bad magic {magic:?}, expected \"TRDW\"")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(4, format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|e| r.error(at + 4, format!("tensor name is not UTF-8: {e}")))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| r.error(at, format!("extents of `{name}` overflow")))?;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| r.error(at, "payload overflows"))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.tensors.contains_key(&name) {
                return Err(r.error(at, format!("duplicate tensor name `{name}`")));
            }
            store.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(r.error(r.pos, "trailing bytes after last tensor"));
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::synth::write_atomic(path.as_ref(), &self.to_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            format: "weights",
            offset,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error(
                self.pos,
                format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        };
        let bytes: &'a [u8] = self.bytes;
        let s = &bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// How a parameter is initialized when weights are generated from a seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Const(f32),
}

enum Source<'a> {
    Store(&'a WeightStore),
    Random(ChaCha8Rng),
}

/// Hands out parameters to module constructors, either from a loaded
/// [`WeightStore`] or freshly drawn from a seeded generator.
///
/// Every parameter handed out is recorded, so a seeded model can be exported
/// with [`Params::into_store`].
pub struct Params<'a> {
    source: Source<'a>,
    taken: WeightStore,
}

impl<'a> Params<'a> {
    pub fn from_store(store: &'a WeightStore) -> Self {
        Self {
            source: Source::Store(store),
            taken: WeightStore::new(),
        }
    }

    pub fn random(seed: u64) -> Params<'static> {
        Params {
            source: Source::Random(ChaCha8Rng::seed_from_u64(seed)),
            taken: WeightStore::new(),
        }
    }

    pub fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let t = match &mut self.source {
            Source::Store(store) => {
                let t = store
                    .get(name)
                    .ok_or_else(|| Error::MissingWeight(name.to_owned()))?;
                if t.shape() != shape {
                    return Err(Error::WeightShape {
                        name: name.to_owned(),
                        expected: shape.to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                t.clone()
            }
            Source::Random(rng) => match init {
                Init::Const(v) => Tensor::full(shape, v),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
                    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
                }
            },
        };
        if self.taken.insert(name, t.clone()).is_some() {
            return Err(Error::Config(format!("parameter `{name}` requested twice")));
        }
        Ok(t)
    }

    /// Everything handed out so far, in request order.
    pub fn into_store(self) -> WeightStore {
        self.taken
    }
}
