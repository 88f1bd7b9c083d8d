//! Synthetic infrared sequences: faint Gaussian targets on linear tracks over
//! drifting low-frequency clutter and white noise, plus PGM/JSON-lines IO.
//!
//! On disk a sequence is a directory holding `frame_<i>.pgm` (binary P5,
//! maxval 255) and `annotations.jsonl` with one `{frame_id, boxes}` record
//! per frame. A dataset is a root holding `seq_<k>/` directories.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detect::{self, BBox, BoxRecord, FrameRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub targets: usize,
    /// Box side range in pixels; a blob's box spans ±3σ.
    pub extent_min: f64,
    pub extent_max: f64,
    pub background: f64,
    /// Blob amplitude above the local background.
    pub peak: f64,
    pub noise_std: f64,
    pub clutter_amplitude: f64,
    /// Clutter drift in pixels per frame.
    pub clutter_velocity: (f64, f64),
    /// Per-axis bound on target speed in pixels per frame.
    pub velocity_max: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 5,
            targets: 1,
            extent_min: 3.0,
            extent_max: 9.0,
            background: 0.2,
            peak: 0.5,
            noise_std: 0.05,
            clutter_amplitude: 0.1,
            clutter_velocity: (0.5, 0.25),
            velocity_max: 2.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames < 2 {
            return bad(format!("a window needs at least 2 frames, got {}", self.frames));
        }
        if self.height == 0 || self.width == 0 {
            return bad("image extent must be positive".into());
        }
        if !(self.extent_min >= 1.0 && self.extent_max >= self.extent_min) {
            return bad(format!(
                "target extent range [{}, {}] must satisfy 1 <= min <= max",
                self.extent_min, self.extent_max
            ));
        }
        if !(self.velocity_max >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("velocity bound and noise std must be non-negative".into());
        }
        let travel = self.velocity_max * (self.frames - 1) as f64;
        let need = self.extent_max + travel;
        if need > self.height.min(self.width) as f64 {
            return bad(format!(
                "targets of extent {} moving up to {} px cannot stay inside a {}x{} image",
                self.extent_max, travel, self.height, self.width
            ));
        }
        Ok(())
    }
}

/// A target on a linear track; frame `i` is centered at `start + i·velocity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub extent: f64,
}

impl Target {
    pub fn center(&self, frame: usize) -> (f64, f64) {
        let i = frame as f64;
        (self.start.0 + i * self.velocity.0, self.start.1 + i * self.velocity.1)
    }

    pub fn sigma(&self) -> f64 {
        self.extent / 6.0
    }

    pub fn bbox(&self, frame: usize) -> BBox {
        let (cx, cy) = self.center(frame);
        BBox::new(cx, cy, self.extent, self.extent)
    }
}

/// One drifting cosine component of the background clutter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    /// Cycles per pixel along x and y.
    pub freq: (f64, f64),
    pub phase: f64,
}

/// `T` consecutive frames (`[T,H,W]`, values in `[0,1]`) with per-frame boxes.
/// The last frame is the keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow {
    pub frames: Tensor,
    pub boxes: Vec<Vec<BBox>>,
}

impl FrameWindow {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keyframe(&self) -> usize {
        self.len() - 1
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    /// Ground truth of the keyframe.
    pub fn gts(&self) -> &[BBox] {
        &self.boxes[self.keyframe()]
    }

    pub fn records(&self) -> Vec<FrameRecord> {
        self.boxes
            .iter()
            .enumerate()
            .map(|(i, bs)| FrameRecord {
                frame_id: i,
                boxes: bs.iter().map(BoxRecord::annotation).collect(),
            })
            .collect()
    }
}

fn window_rng(cfg: &SceneConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    rng
}

/// Renders frames for explicit targets and clutter; noise comes from `rng`.
pub fn render(cfg: &SceneConfig, targets: &[Target], clutter: &[Wave], rng: &mut impl Rng) -> Result<FrameWindow> {
    cfg.validate()?;
    let (h, w, t) = (cfg.height, cfg.width, cfg.frames);
    for (k, tg) in targets.iter().enumerate() {
        for f in 0..t {
            let (x1, y1, x2, y2) = tg.bbox(f).corners();
            if x1 < 0.0 || y1 < 0.0 || x2 > w as f64 || y2 > h as f64 {
                return Err(Error::Config(format!("target {k} leaves the image at frame {f}")));
            }
        }
    }
    let mut data = Vec::with_capacity(t * h * w);
    for f in 0..t {
        let shift = (cfg.clutter_velocity.0 * f as f64, cfg.clutter_velocity.1 * f as f64);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut v = cfg.background;
                for wave in clutter {
                    let arg = wave.freq.0 * (px - shift.0) + wave.freq.1 * (py - shift.1);
                    v += wave.amplitude * (2.0 * PI * arg + wave.phase).cos();
                }
                for tg in targets {
                    let (cx, cy) = tg.center(f);
                    let s = tg.sigma();
                    let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                    v += cfg.peak * (-d2 / (2.0 * s * s)).exp();
                }
                if cfg.noise_std > 0.0 {
                    let n: f64 = StandardNormal.sample(rng);
                    v += cfg.noise_std * n;
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(FrameWindow {
        frames: Tensor::new(vec![t, h, w], data)?,
        boxes: (0..t).map(|f| targets.iter().map(|tg| tg.bbox(f)).collect()).collect(),
    })
}

/// Window `index` of the scene; a pure function of `(cfg, index)`.
pub fn generate_window(cfg: &SceneConfig, index: usize) -> Result<FrameWindow> {
    cfg.validate()?;
    let mut rng = window_rng(cfg, index);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let span = (cfg.frames - 1) as f64;
    let mut targets = Vec::with_capacity(cfg.targets);
    for _ in 0..cfg.targets {
        let extent = if cfg.extent_max > cfg.extent_min {
            rng.gen_range(cfg.extent_min..=cfg.extent_max)
        } else {
            cfg.extent_min
        };
        let mut axis = |size: f64| {
            let v = if cfg.velocity_max > 0.0 {
                rng.gen_range(-cfg.velocity_max..=cfg.velocity_max)
            } else {
                0.0
            };
            let lo = extent / 2.0 + (-v * span).max(0.0);
            let hi = size - extent / 2.0 - (v * span).max(0.0);
            (rng.gen_range(lo..=hi), v)
        };
        let (sx, vx) = axis(w);
        let (sy, vy) = axis(h);
        targets.push(Target {
            start: (sx, sy),
            velocity: (vx, vy),
            extent,
        });
    }
    let clutter: Vec<Wave> = (0..3)
        .map(|_| Wave {
            amplitude: cfg.clutter_amplitude / 3.0,
            freq: (rng.gen_range(-1.0..=1.0) / 32.0, rng.gen_range(-1.0..=1.0) / 32.0),
            phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect();
    render(cfg, &targets, &clutter, &mut rng)
}

pub fn generate(cfg: &SceneConfig, n_windows: usize) -> Result<Vec<FrameWindow>> {
    (0..n_windows).map(|k| generate_window(cfg, k)).collect()
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn encode_pgm(plane: &[f32], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Parses a binary P5 image into `(height, width, values in [0,1])`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let err = |offset: usize, msg: String| Error::Format {
        format: "pgm",
        offset,
        msg,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(0, "bad magic, expected \"P5\"".into()));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (k, slot) in header.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let field = ["width", "height", "maxval"][k];
        if start == pos {
            return Err(err(start, format!("expected {field}")));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, format!("{field} out of range")))?;
    }
    let [width, height, maxval] = header;
    if !(1..=255).contains(&maxval) {
        return Err(err(pos, format!("maxval {maxval} unsupported, expected 1..=255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected whitespace after header".into()));
    }
    pos += 1;
    let n = width * height;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(err(
            pos + payload.len(),
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    let scale = maxval as f32;
    Ok((height, width, payload[..n].iter().map(|&b| b as f32 / scale).collect()))
}

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i}.pgm"))
}

pub const ANNOTATIONS: &str = "annotations.jsonl";

/// Writes one window as a sequence directory.
pub fn write_sequence(dir: &Path, window: &FrameWindow) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (window.height(), window.width());
    for i in 0..window.len() {
        let plane = &window.frames.data()[i * h * w..(i + 1) * h * w];
        write_atomic(&frame_path(dir, i), &encode_pgm(plane, h, w))?;
    }
    write_atomic(&dir.join(ANNOTATIONS), detect::to_jsonl(&window.records()).as_bytes())
}

/// Writes windows as `seq_<k>` directories under `root`.
pub fn write_dataset(root: &Path, windows: &[FrameWindow]) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (k, win) in windows.iter().enumerate() {
        write_sequence(&root.join(format!("seq_{k}")), win)?;
    }
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    detect::from_jsonl(&text).map_err(|e| match e {
        Error::Format { offset, msg, .. } => Error::Format {
            format: "jsonl",
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Reads a sequence directory; frames are ordered by their numeric index.
pub fn read_sequence(dir: &Path) -> Result<FrameWindow> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(i) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".pgm"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::Config(format!("{} holds no frame_<i>.pgm files", dir.display())));
    }
    let mut data = Vec::new();
    let mut extent = None;
    for &i in &indices {
        let path = frame_path(dir, i);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (h, w, plane) = decode_pgm(&bytes).map_err(|e| match e {
            Error::Format { offset, msg, .. } => Error::Format {
                format: "pgm",
                offset,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        if *extent.get_or_insert((h, w)) != (h, w) {
            return Err(Error::shape("read_sequence", format!("{} is {h}x{w}, earlier frames differ", path.display())));
        }
        data.extend(plane);
    }
    let (h, w) = extent.expect("at least one frame");
    let t = indices.len();
    let mut boxes = vec![Vec::new(); t];
    let ann = dir.join(ANNOTATIONS);
    if ann.exists() {
        for rec in read_annotations(&ann)? {
            if let Some(pos) = indices.iter().position(|&i| i == rec.frame_id) {
                boxes[pos].extend(rec.boxes.iter().map(|b| b.to_bbox()));
            }
        }
    }
    Ok(FrameWindow {
        frames: Tensor::new(vec![t, h, w], data)?,
        boxes,
    })
}
