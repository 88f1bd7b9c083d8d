use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tridomain::config::RcuMode;
use tridomain::detect::{self, BoxRecord, FrameRecord};
use tridomain::fourier;
use tridomain::lgfm::{SwinBranch, WindowAttnConfig};
use tridomain::loss::{self, LossWeights};
use tridomain::metrics;
use tridomain::synth::{self, SceneConfig};
use tridomain::tensor::{self, ConvSpec};
use tridomain::{BBox, Detector, Error, Params, PipelineConfig, Result, Tensor, WeightStore};

#[derive(Parser)]
#[command(name = "tridomain", version, about = "Multi-frame small target detection pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic sequence directories.
    Synth {
        /// Scene configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        windows: usize,
    },
    /// Run the detector over every frame of a sequence and write JSON-lines detections.
    Forward {
        /// A weights file, or `random:SEED`.
        #[arg(long)]
        weights: String,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Write seeded random weights to a file.
    InitWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        det: PathBuf,
        /// A sequence directory or an annotations file.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = metrics::AP_IOU)]
        iou: f64,
        /// Where to write the precision-recall curve as CSV.
        #[arg(long)]
        pr: Option<PathBuf>,
    },
    /// Compare analytic and numeric regression-loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a box to a target by gradient descent on the regression loss.
    Fitbox {
        /// `cx,cy,w,h`
        #[arg(long, value_parser = parse_box)]
        init: BBox,
        /// `cx,cy,w,h`
        #[arg(long, value_parser = parse_box)]
        target: BBox,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
    },
    /// Time a core operation and print the median.
    Bench {
        #[arg(long, value_enum)]
        op: BenchOp,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_msrm: bool,
    #[arg(long)]
    no_tdem: bool,
    #[arg(long)]
    no_lgfm: bool,
    #[arg(long, value_enum)]
    rcu: Option<RcuArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RcuArg {
    None,
    A,
    B,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchOp {
    Fft,
    Conv,
    Attn,
}

impl ModelArgs {
    fn pipeline(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        cfg.ablation.msrm &= !self.no_msrm;
        cfg.ablation.tdem &= !self.no_tdem;
        cfg.ablation.lgfm &= !self.no_lgfm;
        if let Some(rcu) = self.rcu {
            cfg.ablation.rcu = match rcu {
                RcuArg::None => RcuMode::None,
                RcuArg::A => RcuMode::A,
                RcuArg::B => RcuMode::B,
                RcuArg::C => RcuMode::C,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_box(s: &str) -> std::result::Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [cx, cy, w, h] => Ok(BBox::new(cx, cy, w, h)),
        _ => Err(format!("expected cx,cy,w,h, got {} values", v.len())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Synth { config, out, windows } => {
            let cfg = match config {
                Some(path) => SceneConfig::load(&path)?,
                None => SceneConfig::default(),
            };
            synth::write_dataset(&out, &synth::generate(&cfg, windows)?)?;
            println!("wrote {windows} sequence(s) to {}", out.display());
        }
        Cmd::Forward { weights, seq, out, model } => {
            let cfg = model.pipeline()?;
            let det = load_detector(&cfg, &weights)?;
            let window = synth::read_sequence(&seq)?;
            let boxes = det.detect_sequence(&window.frames)?;
            let records: Vec<FrameRecord> = boxes
                .iter()
                .enumerate()
                .map(|(frame_id, bs)| FrameRecord {
                    frame_id,
                    boxes: bs.iter().map(BoxRecord::detection).collect(),
                })
                .collect();
            synth::write_atomic(&out, detect::to_jsonl(&records).as_bytes())?;
            let total: usize = boxes.iter().map(Vec::len).sum();
            println!("{} frame(s), {total} detection(s) -> {}", records.len(), out.display());
        }
        Cmd::InitWeights { seed, out, model } => {
            let (_, store) = Detector::random(&model.pipeline()?, seed)?;
            store.save(&out)?;
            println!("{} tensors -> {}", store.len(), out.display());
        }
        Cmd::Eval { det, gt, iou, pr } => {
            if !(0.0..=1.0).contains(&iou) {
                return Err(Error::Config(format!("IoU threshold must lie in [0, 1], got {iou}")));
            }
            let dets = synth::read_annotations(&det)?;
            let gt_path = if gt.is_dir() { gt.join(synth::ANNOTATIONS) } else { gt };
            let gts = synth::read_annotations(&gt_path)?;
            let r = metrics::evaluate_records(&dets, &gts, iou);
            println!("precision: {:.1}%", 100.0 * r.precision);
            println!("recall:    {:.1}%", 100.0 * r.recall);
            println!("f1:        {:.1}%", 100.0 * r.f1);
            println!("mAP50:     {:.1}%", 100.0 * r.ap50);
            println!("tp={} fp={} fn={}", r.tp, r.fp, r.fn_);
            if let Some(path) = pr {
                synth::write_atomic(&path, metrics::pr_csv(&r.pr_points).as_bytes())?;
            }
        }
        Cmd::Gradcheck { cases, seed } => {
            let r = loss::gradcheck(cases, seed, &LossWeights::default())?;
            println!("cases: {}  max relative error: {:.3e}", r.cases, r.max_rel_err);
            if let Some((p, g)) = r.worst {
                println!("worst pair: pred {} target {}", fmt_box(&p), fmt_box(&g));
            }
            if r.max_rel_err > 1e-4 {
                eprintln!("gradient check failed: {:.3e} > 1e-4", r.max_rel_err);
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Fitbox { init, target, steps, lr } => {
            let fit = loss::fit_box(&init, &target, &LossWeights::default(), steps, lr)?;
            for (i, (b, l)) in fit.trajectory.iter().zip(&fit.losses).enumerate() {
                println!("{i:5} {} loss={l:.6e}", fmt_box(b));
            }
            let end = fit.last();
            let err = (end.cx - target.cx).hypot(end.cy - target.cy);
            println!("iterations: {}  center error: {err:.3e} px", fit.iterations);
        }
        Cmd::Bench { op, size, iters } => {
            let median = bench(op, size, iters.max(1))?;
            println!("{} size={size}: {median} ns/op (median of {})", op_name(op), iters.max(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_detector(cfg: &PipelineConfig, weights: &str) -> Result<Detector> {
    if let Some(seed) = weights.strip_prefix("random:") {
        let seed = seed
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("bad seed in `{weights}`: {e}")))?;
        return Ok(Detector::random(cfg, seed)?.0);
    }
    Detector::from_store(cfg, &WeightStore::load(Path::new(weights))?)
}

fn fmt_box(b: &BBox) -> String {
    format!("({:.4}, {:.4}, {:.4}, {:.4})", b.cx, b.cy, b.w, b.h)
}

fn op_name(op: BenchOp) -> &'static str {
    match op {
        BenchOp::Fft => "fft",
        BenchOp::Conv => "conv",
        BenchOp::Attn => "attn",
    }
}

fn bench(op: BenchOp, size: usize, iters: usize) -> Result<u128> {
    if size == 0 {
        return Err(Error::Config("size must be positive".into()));
    }
    let x = Tensor::from_fn(&[16, size, size], |i| ((i * 7919) % 1009) as f32 / 1009.0 - 0.5);
    let mut p = Params::random(0);
    let mut run: Box<dyn FnMut() -> Result<()>> = match op {
        BenchOp::Fft => {
            let plane = Tensor::from_fn(&[1, size, size], |i| x.data()[i]);
            Box::new(move || fourier::dft2(&plane).map(drop))
        }
        BenchOp::Conv => {
            let spec = ConvSpec::same(16, 16, 3).without_bias();
            let w = p.take("w", &spec.weight_shape(), tridomain::weights::Init::FanIn(spec.fan_in()))?;
            Box::new(move || tensor::conv2d(&x, &w, None, &spec).map(drop))
        }
        BenchOp::Attn => {
            let branch = SwinBranch::build(&mut p, "attn", 16, 16, WindowAttnConfig::new(8, 4, 16))?;
            Box::new(move || branch.forward(&x).map(drop))
        }
    };
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed().as_nanos().max(1));
    }
    times.sort_unstable();
    Ok(times[times.len() / 2])
}
