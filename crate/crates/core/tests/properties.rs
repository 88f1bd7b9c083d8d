mod common;

use common::{conv_oracle, max_err, Map};
use proptest::prelude::*;
use tridomain::detect::{self, BBox, FrameRecord, BoxRecord};
use tridomain::fourier::{self, DftPath};
use tridomain::lgfm::{DwPw, FreqEnhance};
use tridomain::loss::{self, LossWeights};
use tridomain::metrics::{self, ScoredMatch};
use tridomain::msrm::{self, NabConfig, NonLocal};
use tridomain::rcu::{Csab, CsabSpec};
use tridomain::synth::{self, SceneConfig};
use tridomain::tdem::{self, Tdem};
use tridomain::tensor::{self, ConvSpec, PoolMode};
use tridomain::{Params, Tensor, WeightStore};

fn tensor_of(shape: Vec<usize>, lo: f32, hi: f32) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn chw(max_c: usize, max_hw: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(|(c, h, w)| tensor_of(vec![c, h, w], -2.0, 2.0))
}

fn pow2_plane(max_log: u32) -> impl Strategy<Value = Tensor> {
    (1..=4usize, 1..=max_log, 1..=max_log).prop_flat_map(|(c, lh, lw)| tensor_of(vec![c, 1 << lh, 1 << lw], -1.0, 1.0))
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..64.0f64, 0.0..64.0f64, 0.5..16.0f64, 0.5..16.0f64, 0.0..1.0f64).prop_map(|(cx, cy, w, h, s)| BBox::scored(cx, cy, w, h, s))
}

fn params_seed() -> impl Strategy<Value = u64> {
    0..1000u64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv_matches_oracle(x in chw(4, 16), k in prop::sample::select(vec![1usize, 3, 5]), stride in 1..=2usize, seed in params_seed()) {
        let c = x.shape()[0];
        let spec = ConvSpec::same(c, 3, k).with_stride(stride);
        let mut p = Params::random(seed);
        let w = p.take("w", &spec.weight_shape(), tridomain::weights::Init::FanIn(1)).unwrap();
        let b = p.take("b", &[3], tridomain::weights::Init::FanIn(1)).unwrap();
        let got = tensor::conv2d(&x, &w, Some(&b), &spec).unwrap();
        prop_assert!(max_err(&got, &conv_oracle(&Map::from_tensor(&x), &w, Some(&b), &spec)) < 1e-4);
    }

    #[test]
    fn pool_matches_oracle(x in chw(4, 16), k in 1..=3usize, s in 1..=3usize, max in any::<bool>()) {
        let (c, h, w) = x.dims3().unwrap();
        prop_assume!(k <= h && k <= w);
        let mode = if max { PoolMode::Max } else { PoolMode::Avg };
        let got = tensor::pool2d(&x, mode, k, s).unwrap();
        let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
        prop_assert_eq!(got.shape(), &[c, ho, wo]);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let vals: Vec<f64> = (0..k * k).map(|i| x.at3(ch, oy * s + i / k, ox * s + i % k) as f64).collect();
                    let want = if max { vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) } else { vals.iter().sum::<f64>() / (k * k) as f64 };
                    prop_assert!((got.at3(ch, oy, ox) as f64 - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn matmul_matches_oracle(n in 1..=16usize, k in 1..=16usize, m in 1..=16usize, seed in params_seed()) {
        let mut p = Params::random(seed);
        let a = p.take("a", &[n, k], tridomain::weights::Init::FanIn(1)).unwrap();
        let b = p.take("b", &[k, m], tridomain::weights::Init::FanIn(1)).unwrap();
        let got = a.matmul(&b).unwrap();
        for i in 0..n {
            for j in 0..m {
                let want: f64 = (0..k).map(|t| a.data()[i * k + t] as f64 * b.data()[t * m + j] as f64).sum();
                prop_assert!((got.data()[i * m + j] as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_is_linear(x in chw(3, 8), seed in params_seed(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let (c, h, w) = x.dims3().unwrap();
        let spec = ConvSpec::same(c, 2, 3).without_bias();
        let mut p = Params::random(seed);
        let wt = p.take("w", &spec.weight_shape(), tridomain::weights::Init::FanIn(spec.fan_in())).unwrap();
        let y = p.take("y", &[c, h, w], tridomain::weights::Init::FanIn(1)).unwrap();
        let f = |t: &Tensor| tensor::conv2d(t, &wt, None, &spec).unwrap();
        let lhs = f(&x.scale(a).add(&y.scale(b)).unwrap());
        let rhs = f(&x).scale(a).add(&f(&y).scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn depthwise_unit_kernels_are_identity(x in chw(5, 10)) {
        let c = x.shape()[0];
        let spec = ConvSpec::depthwise(c, 1).without_bias();
        let w = Tensor::full(&spec.weight_shape(), 1.0);
        prop_assert_eq!(tensor::conv2d(&x, &w, None, &spec).unwrap(), x);
    }

    #[test]
    fn ops_are_bitwise_deterministic(x in chw(4, 12), seed in params_seed()) {
        let c = x.shape()[0];
        let spec = ConvSpec::same(c, 4, 3);
        let mut p = Params::random(seed);
        let w = p.take("w", &spec.weight_shape(), tridomain::weights::Init::FanIn(9)).unwrap();
        let b = p.take("b", &[4], tridomain::weights::Init::FanIn(9)).unwrap();
        let once = tensor::conv2d(&x, &w, Some(&b), &spec).unwrap();
        let twice = tensor::conv2d(&x.clone(), &w, Some(&b), &spec).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        let fe = FreqEnhance::build(&mut Params::random(seed), "f", c).unwrap();
        prop_assert_eq!(fe.forward(&x).unwrap(), fe.forward(&x).unwrap());
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(rows in 1..=6usize, cols in 1..=20usize, seed in params_seed(), shift in -50.0f32..50.0) {
        let x = Params::random(seed).take("x", &[rows, cols], tridomain::weights::Init::Const(0.0)).unwrap();
        let x = Tensor::from_fn(&[rows, cols], |i| x.data()[i] + ((i * 7919 + seed as usize) % 97) as f32 / 10.0 - 5.0);
        let s = x.softmax(1).unwrap();
        for row in s.data().chunks(cols) {
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        let shifted = x.map(|v| v + shift).softmax(1).unwrap();
        prop_assert!(s.max_abs_diff(&shifted) < 1e-5);
    }

    #[test]
    fn parseval_holds(x in pow2_plane(6)) {
        let spec = fourier::dft2(&x).unwrap();
        let (_, h, w) = x.dims3().unwrap();
        let energy: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let spectral: f64 = spec.re.iter().zip(&spec.im).map(|(a, b)| a * a + b * b).sum::<f64>() / (h * w) as f64;
        prop_assert!((energy - spectral).abs() <= 1e-4 * energy.max(1e-12));
    }

    #[test]
    fn dft_is_linear_and_conjugate_symmetric(x in pow2_plane(4), a in -2.0f32..2.0) {
        let y = x.map(|v| (v * 3.0).sin());
        let lhs = fourier::dft2(&x.scale(a).add(&y).unwrap()).unwrap();
        let (sx, sy) = (fourier::dft2(&x).unwrap(), fourier::dft2(&y).unwrap());
        for i in 0..lhs.re.len() {
            prop_assert!((lhs.re[i] - (a as f64 * sx.re[i] + sy.re[i])).abs() < 1e-5);
            prop_assert!((lhs.im[i] - (a as f64 * sx.im[i] + sy.im[i])).abs() < 1e-5);
        }
        let [c, h, w] = sx.shape();
        for ch in 0..c {
            for u in 0..h {
                for v in 0..w {
                    prop_assert!((sx.bin(ch, u, v) - sx.bin(ch, (h - u) % h, (w - v) % w).conj()).norm() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn fft_and_direct_paths_agree(x in pow2_plane(5)) {
        let f = fourier::dft2_with(&x, DftPath::Fft).unwrap();
        let d = fourier::dft2_with(&x, DftPath::Direct).unwrap();
        let err = f.re.iter().zip(&d.re).chain(f.im.iter().zip(&d.im)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn non_local_zero_gamma_identity(x in chw(4, 5), seed in params_seed()) {
        let c = x.shape()[0];
        let nl = NonLocal::build(&mut Params::random(seed), "n", c, NabConfig::for_channels(c, 0.0)).unwrap();
        prop_assert_eq!(nl.forward(&x).unwrap(), x);
    }

    #[test]
    fn attention_rows_are_distributions(x in chw(4, 5), seed in params_seed()) {
        let c = x.shape()[0];
        let nl = NonLocal::build(&mut Params::random(seed), "n", c, NabConfig::for_channels(c, 1.0)).unwrap();
        let a = nl.attention(&x).unwrap();
        let n = a.shape()[0];
        for row in a.data().chunks(n) {
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let flat = x.clone().reshape(&[c, n]).unwrap();
        let (sim, read) = msrm::memory_attention(&flat, &flat, &flat).unwrap();
        for q in 0..n {
            prop_assert!(((0..n).map(|m| sim.data()[m * n + q] as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for ch in 0..c {
            let row = &flat.data()[ch * n..(ch + 1) * n];
            let (lo, hi) = (row.iter().cloned().fold(f32::INFINITY, f32::min), row.iter().cloned().fold(f32::NEG_INFINITY, f32::max));
            for q in 0..n {
                let v = read.data()[ch * n + q];
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn tdem_static_windows_and_shapes(t in 2..=5usize, c in 1..=3usize, h in 2..=9usize, w in 2..=9usize, seed in params_seed()) {
        let frame = Params::random(seed).take("f", &[c, h, w], tridomain::weights::Init::FanIn(1)).unwrap();
        let window = Tensor::stack(&vec![frame.clone(); t]).unwrap();
        prop_assert!(tdem::frame_diffs(&window).unwrap().data().iter().all(|&v| v == 0.0));
        let td = Tdem::build(&mut Params::random(seed), "t", t, c).unwrap();
        let moving = Tensor::from_fn(&[t, c, h, w], |i| ((i * 31 + seed as usize) % 17) as f32 / 17.0);
        let out = td.forward(&moving).unwrap();
        prop_assert_eq!(out.shape(), &[c, h, w]);
    }

    #[test]
    fn freq_maps_bounded_and_shape_preserving(x in chw(3, 8), seed in params_seed()) {
        let c = x.shape()[0];
        let fe = FreqEnhance::build(&mut Params::random(seed), "f", c).unwrap();
        let tr = fe.forward_traced(&x).unwrap();
        prop_assert_eq!(tr.out.shape(), x.shape());
        prop_assert!(tr.out.all_finite());
        for m in [&tr.amp_attn, &tr.phase_attn] {
            prop_assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let pi = std::f32::consts::PI;
        prop_assert!(tr.out_phase.data().iter().all(|&v| v >= -pi && v <= pi));
    }

    #[test]
    fn depthwise_path_commutes_with_channel_permutation(x in chw(4, 6), seed in params_seed(), rot in 1..4usize) {
        let c = x.shape()[0];
        let mut unit = DwPw::build(&mut Params::random(seed), "u", c, c).unwrap();
        // Depth-wise only: make the point-wise stage an identity.
        unit.pw.weight = Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 });
        unit.pw.bias = Some(Tensor::zeros(&[c]));
        let perm: Vec<usize> = (0..c).map(|i| (i + rot) % c).collect();
        let permute = |t: &Tensor| Tensor::stack(&perm.iter().map(|&i| t.index0(i).unwrap()).collect::<Vec<_>>()).unwrap();
        let mut permuted_unit = unit.clone();
        let (k, dw) = (3 * 3, unit.dw.weight.data());
        permuted_unit.dw.weight = Tensor::from_fn(&[c, 1, 3, 3], |i| dw[perm[i / k] * k + i % k]);
        permuted_unit.dw.bias = unit.dw.bias.as_ref().map(|b| Tensor::from_fn(&[c], |i| b.data()[perm[i]]));
        let lhs = permute(&unit.forward(&x).unwrap());
        let rhs = permuted_unit.forward(&permute(&x)).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn csab_gates_in_unit_interval(x in chw(6, 6), seed in params_seed()) {
        let c = x.shape()[0];
        let blk = Csab::build(&mut Params::random(seed), "b", c, &CsabSpec::default()).unwrap();
        let (out, tr) = blk.forward_traced(&x).unwrap();
        prop_assert_eq!(out.shape(), x.shape());
        prop_assert!(tr.channel_gate.iter().all(|&g| g > 0.0 && g < 1.0));
        prop_assert!(tr.spatial_gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
        prop_assert_eq!(blk.forward(&x).unwrap(), out);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nms_output_respects_contract(boxes in prop::collection::vec(bbox(), 0..25)) {
        let kept = detect::nms(&boxes, 0.65, 0.001);
        for (i, k) in kept.iter().enumerate() {
            prop_assert!(boxes.contains(k));
            prop_assert!(k.score > 0.001);
            for other in &kept[i + 1..] {
                prop_assert!(k.iou(other) <= 0.65);
                prop_assert!(k.score >= other.score);
            }
        }
    }

    #[test]
    fn decode_encode_round_trip(dx in -1.0f32..2.0, dy in -1.0f32..2.0, lw in -2.0f32..2.0, lh in -2.0f32..2.0, row in 0..4usize, col in 0..4usize) {
        let mut reg = Tensor::zeros(&[4, 4, 4]);
        let i = row * 4 + col;
        for (k, v) in [dx, dy, lw, lh].into_iter().enumerate() {
            reg.data_mut()[k * 16 + i] = v;
        }
        let out = detect::HeadOutput { reg, obj: Tensor::zeros(&[1, 4, 4]), cls: Tensor::zeros(&[1, 4, 4]) };
        let b = detect::decode(&out, 4).unwrap()[i];
        let back = detect::encode(&b, 4, row, col);
        for (got, want) in back.iter().zip([dx, dy, lw, lh]) {
            prop_assert!((got - want as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn nms_ties_keep_lower_index(b in bbox()) {
        let twin = BBox { cx: b.cx + 1e-9, ..b };
        let kept = detect::nms(&[b, twin], 0.65, 0.001);
        prop_assume!(b.score > 0.001);
        prop_assert_eq!(kept, vec![b]);
    }

    #[test]
    fn loss_bounds_and_zero_iff_identical(a in bbox(), b in bbox()) {
        let li = loss::iou_loss(&a, &b).unwrap();
        let ln = loss::nwd_loss(&a, &b, 5.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&li));
        prop_assert!((0.0..1.0).contains(&ln));
        prop_assert_eq!(loss::nwd_loss(&a, &a, 5.0).unwrap(), 0.0);
        prop_assert!(loss::iou_loss(&a, &a).unwrap() < 1e-12);
        let same = (a.cx, a.cy, a.w, a.h) == (b.cx, b.cy, b.w, b.h);
        prop_assert_eq!(ln == 0.0, same);
    }

    #[test]
    fn nwd_symmetric_and_translation_invariant(ax in -20i32..20, ay in -20i32..20, bx in -20i32..20, by in -20i32..20, w in 1i32..10, h in 1i32..10, tx in -64i32..64, ty in -64i32..64) {
        let a = BBox::new(ax as f64, ay as f64, w as f64, h as f64);
        let b = BBox::new(bx as f64 / 2.0, by as f64 / 2.0, h as f64, w as f64);
        let shift = |q: &BBox| BBox { cx: q.cx + tx as f64, cy: q.cy + ty as f64, ..*q };
        let d = loss::nwd_loss(&a, &b, 5.0).unwrap();
        prop_assert_eq!(d, loss::nwd_loss(&b, &a, 5.0).unwrap());
        prop_assert_eq!(d, loss::nwd_loss(&shift(&a), &shift(&b), 5.0).unwrap());
    }

    #[test]
    fn nwd_increases_with_center_distance(w in 1.0f64..10.0, h in 1.0f64..10.0, d1 in 0.0f64..30.0, extra in 1e-3f64..30.0, angle in 0.0f64..6.28) {
        let g = BBox::new(32.0, 32.0, w, h);
        let at = |d: f64| BBox::new(32.0 + d * angle.cos(), 32.0 + d * angle.sin(), w, h);
        prop_assert!(loss::nwd_loss(&at(d1), &g, 5.0).unwrap() < loss::nwd_loss(&at(d1 + extra), &g, 5.0).unwrap());
    }

    #[test]
    fn total_loss_is_linear_in_components(r in 0.0f64..2.0, c in 0.0f64..2.0, o in 0.0f64..2.0, k in 0.0f64..3.0) {
        let w = LossWeights::default();
        let base = loss::weighted_total(r, c, o, &w);
        prop_assert!((base - (5.0 * r + c + o)).abs() < 1e-12);
        prop_assert!((loss::weighted_total(k * r, c, o, &w) - base - 5.0 * (k - 1.0) * r).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_differences(seed in any::<u64>()) {
        let r = loss::gradcheck(4, seed, &LossWeights::default()).unwrap();
        prop_assert!(r.max_rel_err < 1e-4, "{:?}", r);
    }

    #[test]
    fn counts_balance_and_f1_is_harmonic(preds in prop::collection::vec(bbox(), 0..10), gts in prop::collection::vec(bbox(), 0..6)) {
        let mut m = metrics::Matches::default();
        m.add_frame(&preds, &gts, 0.5);
        let c = m.counts;
        prop_assert_eq!(c.tp + c.fn_, gts.len());
        prop_assert_eq!(c.tp + c.fp, preds.len());
        let (p, r) = (c.precision(), c.recall());
        if p + r > 0.0 {
            prop_assert!((c.f1() - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_invariant_under_monotone_rescaling(outcomes in prop::collection::vec((0.0..1.0f64, any::<bool>()), 1..15), n_extra in 0..4usize) {
        let n_gt = outcomes.iter().filter(|o| o.1).count() + n_extra;
        prop_assume!(n_gt > 0);
        let m: Vec<ScoredMatch> = outcomes.iter().map(|&(score, tp)| ScoredMatch { score, tp }).collect();
        let rescaled: Vec<ScoredMatch> = m.iter().map(|s| ScoredMatch { score: (3.0 * s.score).exp() - 7.0, ..*s }).collect();
        prop_assert_eq!(metrics::average_precision(&m, n_gt), metrics::average_precision(&rescaled, n_gt));
    }

    #[test]
    fn jsonl_round_trip(frames in prop::collection::vec(prop::collection::vec(bbox(), 0..4), 0..5)) {
        let recs: Vec<FrameRecord> = frames.iter().enumerate().map(|(i, bs)| FrameRecord { frame_id: i, boxes: bs.iter().map(BoxRecord::detection).collect() }).collect();
        prop_assert_eq!(detect::from_jsonl(&detect::to_jsonl(&recs)).unwrap(), recs);
    }

    #[test]
    fn weight_store_round_trip(shapes in prop::collection::vec(prop::collection::vec(0..4usize, 0..4), 0..6), seed in params_seed()) {
        let mut store = WeightStore::new();
        let mut p = Params::random(seed);
        for (i, s) in shapes.iter().enumerate() {
            store.insert(format!("t{i}.w"), p.take(&format!("t{i}"), s, tridomain::weights::Init::FanIn(1)).unwrap());
        }
        let back = WeightStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(back.names().collect::<Vec<_>>(), store.names().collect::<Vec<_>>());
        for (name, t) in store.iter() {
            let b = back.get(name).unwrap();
            prop_assert_eq!(b.shape(), t.shape());
            prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn synth_boxes_in_bounds_and_pure(seed in any::<u64>(), index in 0..50usize, targets in 0..4usize) {
        let cfg = SceneConfig { seed, targets, ..SceneConfig::default() };
        let win = synth::generate_window(&cfg, index).unwrap();
        prop_assert_eq!(&win, &synth::generate_window(&cfg, index).unwrap());
        for boxes in &win.boxes {
            prop_assert_eq!(boxes.len(), targets);
            for b in boxes {
                let (x1, y1, x2, y2) = b.corners();
                prop_assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 64.0 && y2 <= 64.0);
            }
        }
        prop_assert!(win.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
