//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Built with `harness = false` so the lines always print.
//!
//! Set `SEGTRACK_ACCEPTANCE_WEIGHTS=path` to also save the trained desk
//! network.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segtrack::boxfit::{fit_rotated_box, min_area_box, BoxFitStats, DescentConfig, Mask, MaskIndex, DEFAULT_ALPHA, EVALUATION_BUDGET};
use segtrack::eval::{
    average_overlap_sr, davis_measures, reference_box, region_overlap, run_no_reset, run_reset_protocol, Region, ResetConfig, SequenceTracker,
};
use segtrack::features::{compute_pyramid, Backbone, FeatureAdjust, HandCrafted, BASE_CHANNELS};
use segtrack::gem::{location_channel, train_dcf, DcfConfig, GridPos};
use segtrack::geometry::{Point, RotatedBox};
use segtrack::gim::{build_gim_model, posterior_backward, posterior_channel, scatter_model_grads, similarity_backward, similarity_channels, similarity_forward, GimConfig};
use segtrack::harness::{run_ablation, SequenceInput, VariantSummary};
use segtrack::network::Network;
use segtrack::nn::{
    activation, activation_backward, conv2d, conv2d_backward, crossentropy_with_logits, softmax_channels, softmax_channels_backward, upsample2x,
    upsample2x_backward, Activation, LayerParams, Pelu, Tensor, UpsampleMode,
};
use segtrack::refine::RefineNet;
use segtrack::synth::{SynthConfig, SyntheticSequence};
use segtrack::tracker::{Ablation, TrackerConfig};
use segtrack::train::{overfit_single_pair, train_network, TrainingConfig, TrainingOutcome, TRAINING_SEED_LIMIT};

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn print(l: &Line) {
    println!(
        "{} {:<28} {:>8.1}s  {}",
        if l.pass { "PASS" } else { "FAIL" },
        l.name,
        l.elapsed.as_secs_f64(),
        l.detail
    );
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Worst relative error between analytic and central-difference gradients.
/// Entries where both are below 1e-6 are compared against that floor.
/// Probes whose one-sided differences disagree straddle a ReLU kink, where
/// the function has no derivative; they are counted and skipped.
struct GradCheck {
    worst: f64,
    count: usize,
    kinks: usize,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck { worst: 0.0, count: 0, kinks: 0 }
    }

    /// `f(d)` is the loss with the probed entry moved by `d`.
    fn probe(&mut self, analytic: f64, f: impl Fn(f64) -> f64) {
        let (plus, center, minus) = (f(FD_STEP), f(0.0), f(-FD_STEP));
        let (right, left) = ((plus - center) / FD_STEP, (center - minus) / FD_STEP);
        if (right - left).abs() > 1e-2 * right.abs().max(left.abs()).max(1e-6) {
            self.kinks += 1;
            return;
        }
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        self.worst = self.worst.max(err);
        self.count += 1;
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn nudged(t: &Tensor, i: usize, d: f64) -> Tensor {
    let mut p = t.clone();
    p.data_mut()[i] += d;
    p
}

/// Check `d/dx <f(x), proj>` against `analytic` for every input entry.
fn check_input(g: &mut GradCheck, x: &Tensor, proj: &Tensor, f: impl Fn(&Tensor) -> Tensor, analytic: &Tensor) {
    for i in 0..x.len() {
        g.probe(analytic.data()[i], |d| dot(&f(&nudged(x, i, d)), proj));
    }
}

fn check_layer_params(g: &mut GradCheck, layer: &LayerParams, stride: usize, loss: impl Fn(&LayerParams) -> f64) {
    for i in (0..layer.weights.len()).step_by(stride) {
        g.probe(layer.grad_weights.data()[i], |d| {
            let mut l = layer.clone();
            l.weights.data_mut()[i] += d;
            loss(&l)
        });
    }
    for i in 0..layer.bias.len() {
        g.probe(layer.grad_bias.data()[i], |d| {
            let mut l = layer.clone();
            l.bias.data_mut()[i] += d;
            loss(&l)
        });
    }
}

fn gradient_suite() -> Vec<(&'static str, GradCheck)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();

    // Convolutions, 1×1 and 3×3, on 8×8 inputs.
    for (name, k) in [("conv1x1", 1), ("conv3x3", 3)] {
        let mut g = GradCheck::new();
        let x = rand_tensor(&mut rng, &[3, 8, 8]);
        let mut layer = LayerParams::kaiming(3, 4, k, &mut rng);
        layer.bias = rand_tensor(&mut rng, &[4]);
        let proj = rand_tensor(&mut rng, &[4, 8, 8]);
        let mut with_grad = layer.clone();
        let gx = conv2d_backward(&x, &mut with_grad, &proj).unwrap();
        check_input(&mut g, &x, &proj, |t| conv2d(t, &layer).unwrap(), &gx);
        check_layer_params(&mut g, &with_grad, 1, |l| dot(&conv2d(&x, l).unwrap(), &proj));
        out.push((name, g));
    }

    // Pointwise and resampling layers.
    let pelu = Pelu::new(1.0, 1.0).unwrap();
    for (name, kind) in [("relu", Activation::Relu), ("pelu", Activation::Pelu(pelu))] {
        let mut g = GradCheck::new();
        let x = rand_tensor(&mut rng, &[2, 8, 8]);
        let proj = rand_tensor(&mut rng, &[2, 8, 8]);
        let gx = activation_backward(&x, &proj, kind).unwrap();
        check_input(&mut g, &x, &proj, |t| activation(t, kind), &gx);
        out.push((name, g));
    }
    {
        let mut g = GradCheck::new();
        let x = rand_tensor(&mut rng, &[2, 8, 8]);
        let proj = rand_tensor(&mut rng, &[2, 8, 8]);
        let y = softmax_channels(&x).unwrap();
        let gx = softmax_channels_backward(&y, &proj).unwrap();
        check_input(&mut g, &x, &proj, |t| softmax_channels(t).unwrap(), &gx);
        out.push(("softmax", g));
    }
    for (name, mode) in [("upsample-nearest", UpsampleMode::Nearest), ("upsample-bilinear", UpsampleMode::Bilinear)] {
        let mut g = GradCheck::new();
        let x = rand_tensor(&mut rng, &[2, 4, 4]);
        let proj = rand_tensor(&mut rng, &[2, 8, 8]);
        let gx = upsample2x_backward(&proj, mode).unwrap();
        check_input(&mut g, &x, &proj, |t| upsample2x(t, mode).unwrap(), &gx);
        out.push((name, g));
    }
    {
        let mut g = GradCheck::new();
        let x = rand_tensor(&mut rng, &[2, 8, 8]);
        let target = Mask::from_fn(8, 8, |x, y| (x + 2 * y) % 3 == 0);
        let (_, gx) = crossentropy_with_logits(&x, &target).unwrap();
        for i in 0..x.len() {
            g.probe(gx.data()[i], |d| crossentropy_with_logits(&nudged(&x, i, d), &target).unwrap().0);
        }
        out.push(("crossentropy", g));
    }

    // GIM matching: query features and the stored vectors (through the
    // features they were taken from), then the posterior.
    {
        let mut g = GradCheck::new();
        let train = rand_tensor(&mut rng, &[6, 6, 6]);
        let query = rand_tensor(&mut rng, &[6, 6, 6]);
        let mask = Mask::from_fn(6, 6, |x, y| (1..4).contains(&x) && (2..5).contains(&y));
        let cfg = GimConfig { k: 3, ..GimConfig::default() };
        let (pf, pb) = (rand_tensor(&mut rng, &[1, 6, 6]), rand_tensor(&mut rng, &[1, 6, 6]));
        let loss = |train: &Tensor, query: &Tensor| {
            let model = build_gim_model(train, &mask, &cfg).unwrap();
            let (f, b) = similarity_channels(query, &model).unwrap();
            dot(&f, &pf) + dot(&b, &pb)
        };
        let model = build_gim_model(&train, &mask, &cfg).unwrap();
        let pass = similarity_forward(&query, &model).unwrap();
        let grads = similarity_backward(&pass, &model, &pf, &pb).unwrap();
        let g_train = scatter_model_grads(&model, &grads).unwrap();
        for i in 0..query.len() {
            g.probe(grads.features.data()[i], |d| loss(&train, &nudged(&query, i, d)));
        }
        for i in 0..train.len() {
            g.probe(g_train.data()[i], |d| loss(&nudged(&train, i, d), &query));
        }
        out.push(("gim-similarity", g));
    }
    {
        let mut g = GradCheck::new();
        let f = rand_tensor(&mut rng, &[1, 8, 8]);
        let b = rand_tensor(&mut rng, &[1, 8, 8]);
        let proj = rand_tensor(&mut rng, &[1, 8, 8]);
        let p = posterior_channel(&f, &b).unwrap();
        let (gf, gb) = posterior_backward(&p, &proj);
        check_input(&mut g, &f, &proj, |t| posterior_channel(t, &b).unwrap(), &gf);
        check_input(&mut g, &b, &proj, |t| posterior_channel(&f, t).unwrap(), &gb);
        out.push(("posterior", g));
    }

    // Trainable feature adjustment (1×1 reduction + 3×3) on an 8×8 level.
    {
        let mut g = GradCheck::new();
        let level = rand_tensor(&mut rng, &[BASE_CHANNELS, 8, 8]);
        let mut adj = FeatureAdjust::new(BASE_CHANNELS, &mut rng);
        for l in adj.layers_mut() {
            l.bias = Tensor::uniform(l.bias.shape(), 0.0, 0.2, &mut rng);
        }
        let proj = rand_tensor(&mut rng, &[64, 8, 8]);
        let cache = adj.forward_cached(&level).unwrap();
        let mut with_grad = adj.clone();
        for l in with_grad.layers_mut() {
            l.zero_grad();
        }
        with_grad.backward(&cache, &proj).unwrap();
        let reduce = with_grad.reduce.clone();
        check_layer_params(&mut g, &reduce, 13, |l| {
            let a = FeatureAdjust { reduce: l.clone(), conv: adj.conv.clone() };
            dot(&a.forward(&level).unwrap(), &proj)
        });
        let conv = with_grad.conv.clone();
        check_layer_params(&mut g, &conv, 97, |l| {
            let a = FeatureAdjust { reduce: adj.reduce.clone(), conv: l.clone() };
            dot(&a.forward(&level).unwrap(), &proj)
        });
        out.push(("feature-adjust", g));
    }

    // Full refinement pathway on a 6×6 grid (48×48 output) under the
    // training loss: every layer's parameters plus the fusion input.
    {
        let mut g = GradCheck::new();
        let crop = 48;
        let net = RefineNet::new(3, [BASE_CHANNELS, BASE_CHANNELS], &mut rng);
        let img = Tensor::uniform(&[3, crop, crop], 0.0, 1.0, &mut rng);
        let pyr = compute_pyramid(&img).unwrap();
        let input = Tensor::uniform(&[3, 6, 6], 0.0, 1.0, &mut rng);
        let target = Mask::from_fn(crop, crop, |x, y| (10..30).contains(&x) && (14..40).contains(&y));
        let loss = |n: &RefineNet, inp: &Tensor| crossentropy_with_logits(&n.forward_cached(inp, &pyr).unwrap().logits, &target).unwrap().0;
        let mut with_grad = net.clone();
        for l in with_grad.layers_mut() {
            l.zero_grad();
        }
        let cache = net.forward_cached(&input, &pyr).unwrap();
        let (_, gl) = crossentropy_with_logits(&cache.logits, &target).unwrap();
        let g_in = with_grad.backward(&cache, &gl).unwrap();
        let n_layers = net.layers().len();
        for li in 0..n_layers {
            let layer = with_grad.layers()[li].clone();
            let stride = (layer.weights.len() / 40).max(1);
            check_layer_params(&mut g, &layer, stride, |l| {
                let mut n = net.clone();
                *n.layers_mut()[li] = l.clone();
                loss(&n, &input)
            });
        }
        for i in 0..input.len() {
            g.probe(g_in.data()[i], |d| loss(&net, &nudged(&input, i, d)));
        }
        out.push(("refinement-pathway", g));
    }
    out
}

// ------------------------------------------------------------------ oracles

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    }
}

fn cell(t: &Tensor, i: usize) -> Vec<f64> {
    let n = t.shape()[1] * t.shape()[2];
    (0..t.shape()[0]).map(|c| t.data()[c * n + i]).collect()
}

/// Largest deviation of top-K similarity from sort-then-average.
fn top_k_oracle() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let stored = rand_tensor(&mut rng, &[16, 8, 8]);
        let query = rand_tensor(&mut rng, &[16, 8, 8]);
        let (x0, y0) = (rng.gen_range(0..4), rng.gen_range(0..4));
        let mask = Mask::from_fn(8, 8, |x, y| (x0..x0 + 4).contains(&x) && (y0..y0 + 3).contains(&y));
        for k in [1, 3, 5, 12, 100] {
            let model = build_gim_model(&stored, &mask, &GimConfig { k, seed: trial, ..GimConfig::default() }).unwrap();
            let (f, b) = similarity_channels(&query, &model).unwrap();
            for (got, cells) in [(&f, model.foreground.cells()), (&b, model.background.cells())] {
                for i in 0..64 {
                    let mut s: Vec<f64> = cells.iter().map(|&j| cosine(&cell(&query, i), &cell(&stored, j))).collect();
                    s.sort_by(|a, b| b.total_cmp(a));
                    let kk = k.min(s.len());
                    let expect = s[..kk].iter().sum::<f64>() / kk as f64;
                    worst = worst.max((got.data()[i] - expect).abs());
                }
            }
        }
    }
    worst
}

/// Largest deviation of the Fourier filter from the normal-equation ridge
/// solution on 8×8 single-channel features.
fn dcf_oracle() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let f = rand_tensor(&mut rng, &[1, 8, 8]);
        let cfg = DcfConfig { cosine_window: false, ..DcfConfig::default() };
        let center = GridPos::new(rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0));
        let filt = train_dcf(&f, center, 8.0, &cfg).unwrap();
        let (h, w, n) = (8, 8, 64);
        // Row τ: response at shift τ is Σ_x h(x)·f(x + τ).
        let a = DMatrix::from_fn(n, n, |tau, x| f.at3(0, (x / w + tau / w) % h, (x % w + tau % w) % w));
        let y = DVector::from_column_slice(filt.label.data());
        let lhs = a.transpose() * &a + DMatrix::identity(n, n) * cfg.lambda;
        let sol = lhs.lu().solve(&(a.transpose() * y)).unwrap();
        for (got, want) in filt.spatial_filter(0).iter().zip(sol.iter()) {
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

fn distance_oracle() -> f64 {
    let mut worst: f64 = 0.0;
    for (h, w, r, c) in [(16, 16, 3.0, 11.0), (12, 20, 0.0, 19.0), (9, 7, 4.5, 2.25)] {
        let l = location_channel(GridPos::new(r, c), h, w);
        let diag = (((h - 1) * (h - 1) + (w - 1) * (w - 1)) as f64).sqrt();
        for y in 0..h {
            for x in 0..w {
                let d = ((y as f64 - r).powi(2) + (x as f64 - c).powi(2)).sqrt();
                let want = (1.0 - d / diag).max(0.0);
                worst = worst.max((l.at3(0, y, x) - want).abs());
            }
        }
    }
    worst
}

fn random_box(rng: &mut ChaCha8Rng, near: Point) -> RotatedBox {
    RotatedBox::new(
        Point::new(near.x + rng.gen_range(-6.0..6.0), near.y + rng.gen_range(-6.0..6.0)),
        rng.gen_range(4.0..20.0),
        rng.gen_range(2.0..12.0),
        rng.gen_range(0.0..std::f64::consts::PI),
    )
}

/// Stratified Monte-Carlo IoU with 10⁶ samples over the union's bounds.
fn monte_carlo_iou(a: &RotatedBox, b: &RotatedBox, rng: &mut ChaCha8Rng) -> f64 {
    let pts: Vec<Point> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let n = 1000;
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut both, mut either) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let p = Point::new(x0 + (i as f64 + rng.gen::<f64>()) * dx, y0 + (j as f64 + rng.gen::<f64>()) * dy);
            let (ia, ib) = (a.contains(p), b.contains(p));
            both += (ia && ib) as usize;
            either += (ia || ib) as usize;
        }
    }
    both as f64 / either as f64
}

fn polygon_iou_oracle() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_box(&mut rng, Point::new(50.0, 50.0));
        let b = random_box(&mut rng, a.center);
        let got = region_overlap(&Region::from(a), &Region::from(b));
        worst = worst.max((got - monte_carlo_iou(&a, &b, &mut rng)).abs());
    }
    worst
}

/// Largest amount by which the calipers box exceeds the best 1°-sweep box
/// (relative); ≤ 0 means it is never beaten.
fn min_area_oracle() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = rng.gen_range(3..40);
        let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..60.0))).collect();
        let exact = min_area_box(&pts).area();
        for deg in 0..180 {
            let t = (deg as f64).to_radians();
            let (c, s) = (t.cos(), t.sin());
            let us = pts.iter().map(|p| p.x * c + p.y * s);
            let vs = pts.iter().map(|p| -p.x * s + p.y * c);
            let span = |it: &mut dyn Iterator<Item = f64>| {
                let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                hi - lo
            };
            let area = span(&mut us.into_iter()) * span(&mut vs.into_iter());
            worst = worst.max((exact - area) / area.max(1e-12));
        }
    }
    worst
}

/// Union of a few random ellipses on a `size`² canvas.
fn random_blob(rng: &mut ChaCha8Rng, size: usize) -> Mask {
    let s = size as f64;
    let parts: Vec<(f64, f64, f64, f64, f64)> = (0..rng.gen_range(1..4))
        .map(|_| {
            (
                s * rng.gen_range(0.35..0.65),
                s * rng.gen_range(0.35..0.65),
                s * rng.gen_range(0.08..0.25),
                s * rng.gen_range(0.04..0.15),
                rng.gen_range(0.0..std::f64::consts::PI),
            )
        })
        .collect();
    Mask::from_fn(size, size, |x, y| {
        parts.iter().any(|&(cx, cy, a, b, t)| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let (u, v) = (dx * t.cos() + dy * t.sin(), -dx * t.sin() + dy * t.cos());
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
    })
}

/// Worst ratio of descent score to the best side-scale grid score.
fn descent_oracle() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let mask = random_blob(&mut rng, 128);
        let fit = fit_rotated_box(&mask, &DescentConfig::default()).unwrap();
        let index = MaskIndex::new(&mask);
        let base = fit.initial.rbox;
        let mut best: f64 = 0.0;
        for i in 0..=70 {
            for j in 0..=70 {
                let (sa, sb) = (0.5 + 0.01 * i as f64, 0.5 + 0.01 * j as f64);
                let b = RotatedBox { major: base.major * sa, minor: base.minor * sb, ..base };
                best = best.max(index.stats(&b, DEFAULT_ALPHA).score());
            }
        }
        worst = worst.min(fit.score / best);
    }
    worst
}

// --------------------------------------------------------------- protocols

/// Returns a box of width `w` sharing the left edge of the unit-height
/// ground truth `[0, 10] × [0, 1]`, so the overlap is `w / 10` for w ≤ 10.
struct Scripted {
    overlaps: Vec<f64>,
}

fn strip(x0: f64, x1: f64) -> Region {
    RotatedBox::axis_aligned(x0, 0.0, x1, 1.0).into()
}

impl SequenceTracker for Scripted {
    fn initialize(&mut self, _: usize, _: &Region) -> segtrack::Result<()> {
        Ok(())
    }
    fn track(&mut self, t: usize) -> segtrack::Result<Region> {
        let o = self.overlaps[t];
        Ok(if o == 0.0 { strip(20.0, 30.0) } else { strip(0.0, 10.0 * o) })
    }
}

fn protocol_suite() -> Result<String, String> {
    let gt = vec![strip(0.0, 10.0); 30];
    // Failures at 4 and 20; reinit at 9 and 25.
    let mut overlaps = vec![0.5; 30];
    overlaps[4] = 0.0;
    overlaps[20] = 0.0;
    for t in 10..20 {
        overlaps[t] = 0.8;
    }
    overlaps[22] = 0.25;
    let mut factory = || Ok(Scripted { overlaps: overlaps.clone() });
    let cfg = ResetConfig { skip: 5, burn_in: 3 };
    let (m, run) = run_reset_protocol(&mut factory, &gt, &cfg).map_err(|e| e.to_string())?;
    // Eligible: t-last_init > 3 and tracked: frames 13..=19 (0.8 each); the
    // first cycle ends at 4 (failure) before any eligible frame; 21..=24
    // precede the failure at 20's reinit at 25 and so are skipped; 29 is
    // eligible after reinit at 25 (t-25 = 4).
    let want_acc = (7.0 * 0.8 + 0.5) / 8.0;
    let acc = m.accuracy.ok_or("no accuracy")?;
    if m.failures != 2 || (acc - want_acc).abs() > 1e-12 {
        return Err(format!("reset: failures {} accuracy {acc} (want 2, {want_acc})", m.failures));
    }
    if run.events().len() != 5 {
        return Err(format!("reset events {:?}", run.events()));
    }
    let mut tr = Scripted { overlaps: overlaps.clone() };
    let s = average_overlap_sr(&run_no_reset(&mut tr, &gt).map_err(|e| e.to_string())?);
    // Frames 1..29: 0 ×2, 0.8 ×10, 0.25 ×1, 0.5 ×16.
    let want_ao = (8.0 + 0.25 + 8.0) / 29.0;
    if (s.ao - want_ao).abs() > 1e-12 || (s.sr50 - 10.0 / 29.0).abs() > 1e-12 || (s.sr75 - 10.0 / 29.0).abs() > 1e-12 {
        return Err(format!("no-reset: ao {} sr50 {} sr75 {}", s.ao, s.sr50, s.sr75));
    }
    // J/F: identical, empty-vs-empty, one-pixel shift of a 10×10 square, miss.
    let sq = |x0: usize| Mask::from_fn(20, 20, |x, y| (x0..x0 + 10).contains(&x) && (4..14).contains(&y));
    let empty = Mask::new(20, 20);
    let d = davis_measures(&[sq(4), empty.clone(), sq(5), empty.clone()], &[sq(4), empty, sq(4), sq(4)]).map_err(|e| e.to_string())?;
    let want_j = (1.0 + 1.0 + 90.0 / 110.0 + 0.0) / 4.0;
    let want_f = (1.0 + 1.0 + 1.0 + 0.0) / 4.0;
    if (d.j - want_j).abs() > 1e-12 || (d.f - want_f).abs() > 1e-12 {
        return Err(format!("davis: j {} f {}", d.j, d.f));
    }
    // Stored predictions against golden reports, byte for byte.
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden");
    let tmp = std::env::temp_dir().join(format!("segtrack-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).map_err(|e| e.to_string())?;
    for (protocol, extra) in [("reset", &["--set", "burn_in=0"][..]), ("noreset", &[]), ("davis", &[])] {
        let report = tmp.join(format!("{protocol}.csv"));
        let out = Command::new(env!("CARGO_BIN_EXE_segtrack"))
            .args(["eval", "--protocol", protocol, "--predictions"])
            .arg(root.join(protocol))
            .arg("--dataset")
            .arg(root.join("dataset"))
            .arg("--report")
            .arg(&report)
            .args(extra)
            .output()
            .map_err(|e| e.to_string())?;
        let got = std::fs::read(&report).unwrap_or_default();
        let want = std::fs::read(root.join(format!("expected_{protocol}.csv"))).map_err(|e| e.to_string())?;
        if !out.status.success() || got != want {
            return Err(format!("{protocol} golden report differs"));
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(format!("reset acc {acc:.4} / 2 failures, AO {:.4}, J {:.4}, F {:.4}, 3 golden reports", s.ao, d.j, d.f))
}

// ---------------------------------------------------------- box-fit speed

fn box_fit_speed() -> (Duration, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let masks: Vec<Mask> = (0..25).map(|_| random_blob(&mut rng, 384)).collect();
    let mut times = Vec::new();
    let mut evals = 0;
    for m in &masks {
        let t = Instant::now();
        let fit = fit_rotated_box(m, &DescentConfig::default()).unwrap();
        times.push(t.elapsed());
        evals = evals.max(fit.evaluations);
    }
    times.sort();
    (times[times.len() / 2], evals)
}

// ------------------------------------------------------------- end to end

fn held_out_sequences() -> Vec<SyntheticSequence> {
    (0..10).map(|k| SyntheticSequence::new(TRAINING_SEED_LIMIT + 1000 + k, SynthConfig::default())).collect()
}

fn end_to_end(net: Arc<Network>) -> Result<(Vec<VariantSummary>, Vec<String>), String> {
    let seqs = held_out_sequences();
    let rendered: Vec<Vec<Mask>> = seqs.iter().map(|s| s.render_all().1).collect();
    let inputs: Vec<SequenceInput> = seqs
        .iter()
        .zip(&rendered)
        .enumerate()
        .map(|(k, (s, masks))| SequenceInput {
            name: format!("held-out-{k}"),
            frames: s,
            boxes: masks.iter().map(|m| reference_box(m).map_or(Region::Empty, Region::from)).collect(),
            masks: Some(masks.clone()),
        })
        .collect();
    let variants = [Ablation::Full, Ablation::NoF, Ablation::NoP, Ablation::NoL, Ablation::MinMax];
    let backbone: Arc<dyn Backbone> = Arc::new(HandCrafted);
    let results = run_ablation(&net, &backbone, TrackerConfig::default(), &variants, &inputs, &ResetConfig::default()).map_err(|e| e.to_string())?;
    let table = results
        .iter()
        .map(|r| {
            format!(
                "    {:<8} AO {:.3}  J {:.3}  failures {:>3}  accuracy {:.3}",
                r.variant.name(),
                r.ao(),
                r.j().unwrap_or(f64::NAN),
                r.failures(),
                r.accuracy().unwrap_or(f64::NAN)
            )
        })
        .collect();
    Ok((results, table))
}

// -------------------------------------------------------------------- main

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    // `cargo test` passes harness flags; a filter that excludes this target
    // (or `--list`) should not trigger the long run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut lines = Vec::new();
    let mut emit = |l: Line| {
        print(&l);
        lines.push(l.pass);
    };

    // Gradient suite.
    let (checks, elapsed) = timed(gradient_suite);
    let worst = checks.iter().map(|(_, g)| g.worst).fold(0.0, f64::max);
    let entries: usize = checks.iter().map(|(_, g)| g.count).sum();
    let kinks: usize = checks.iter().map(|(_, g)| g.kinks).sum();
    let failing: Vec<String> = checks.iter().filter(|(_, g)| !(g.worst <= GRAD_TOL)).map(|(n, g)| format!("{n}={:.1e}", g.worst)).collect();
    emit(Line {
        name: "gradient-suite",
        pass: failing.is_empty() && kinks * 20 < entries && elapsed < Duration::from_secs(60),
        detail: format!(
            "{} checks, {entries} entries ({kinks} at kinks skipped), worst relative error {worst:.2e} (tol {GRAD_TOL:.0e}){}",
            checks.len(),
            if failing.is_empty() { String::new() } else { format!("; over: {}", failing.join(" ")) }
        ),
        elapsed,
    });

    // Oracle-equivalence suite.
    let t0 = Instant::now();
    let topk = top_k_oracle();
    let dcf = dcf_oracle();
    let dist = distance_oracle();
    let iou = polygon_iou_oracle();
    let min_area = min_area_oracle();
    let descent = descent_oracle();
    let elapsed = t0.elapsed();
    let pass = topk < 1e-10 && dcf < 1e-10 && dist < 1e-12 && iou < 1e-3 && min_area <= 1e-9 && descent >= 0.98 && elapsed < Duration::from_secs(300);
    emit(Line {
        name: "oracle-equivalence",
        pass,
        detail: format!(
            "top-K {topk:.1e}, DCF {dcf:.1e}, distance {dist:.1e}, polygon IoU vs MC {iou:.1e}, min-area excess {min_area:.1e}, descent/grid {descent:.4}"
        ),
        elapsed,
    });

    // Box-fit score arithmetic.
    let (res, elapsed) = timed(|| {
        let s = BoxFitStats { n_in_pos: 80, n_in_neg: 20, n_out_pos: 20, alpha: 0.25 }.score();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let identity = (0..100).all(|_| {
            let (p, n, o) = (rng.gen_range(0..10_000usize), rng.gen_range(0..10_000usize), rng.gen_range(0..10_000usize));
            let s = BoxFitStats { n_in_pos: p, n_in_neg: n, n_out_pos: o, alpha: 0.0 }.score();
            let recall = if p + o == 0 { 0.0 } else { p as f64 / (p + o) as f64 };
            s == recall
        });
        (s, identity)
    });
    emit(Line {
        name: "iou-mod-arithmetic",
        pass: res.0 == 80.0 / 105.0 && res.1,
        detail: format!("(80,20,20,0.25) -> {:.10} (80/105 = {:.10}); alpha=0 recall identity on 100 tuples: {}", res.0, 80.0 / 105.0, res.1),
        elapsed,
    });

    // Protocol suite.
    let (res, elapsed) = timed(protocol_suite);
    emit(Line {
        name: "protocol-suite",
        pass: res.is_ok(),
        detail: res.unwrap_or_else(|e| e),
        elapsed,
    });

    // Box-fit speed.
    let ((median, evals), elapsed) = timed(box_fit_speed);
    emit(Line {
        name: "box-fit-speed",
        pass: median < Duration::from_millis(5) && evals <= EVALUATION_BUDGET,
        detail: format!("median {:.3} ms on 384x384 blobs, max {evals} evaluations (budget {EVALUATION_BUDGET})", median.as_secs_f64() * 1e3),
        elapsed,
    });

    // Training sanity: overfit, desk run, determinism.
    let t0 = Instant::now();
    let desk = TrainingConfig::desk();
    let overfit = overfit_single_pair(&desk, 501);
    let overfit_again = overfit_single_pair(&desk, 501);
    let trained: Result<TrainingOutcome, String> = train_network(&desk).map_err(|e| e.to_string());
    let first_epoch = train_network(&TrainingConfig { epochs: 1, ..desk }).map_err(|e| e.to_string());
    let elapsed = t0.elapsed();
    let (pass, detail) = match (&overfit, &overfit_again, &trained, &first_epoch) {
        (Ok((_, losses)), Ok((_, again)), Ok(out), Ok(short)) => {
            let reached = losses.iter().position(|&l| l < 0.01);
            let (v0, v1) = (out.initial_validation_loss(), out.final_validation_loss());
            let n = short.curve.len();
            let deterministic = losses == again && short.curve[..] == out.curve[..n] && short.validation[..] == out.validation[..short.validation.len()];
            (
                reached.is_some() && v1 <= 0.5 * v0 && deterministic && elapsed < Duration::from_secs(1800),
                format!(
                    "overfit < 0.01 at step {} (min {:.4}); validation {v0:.4} -> {v1:.4} ({:.2}x); deterministic: {deterministic}",
                    reached.map_or("never".into(), |s| s.to_string()),
                    losses.iter().cloned().fold(f64::INFINITY, f64::min),
                    v0 / v1
                ),
            )
        }
        _ => (
            false,
            format!(
                "error: {}",
                [overfit.err().map(|e| e.to_string()), overfit_again.err().map(|e| e.to_string()), trained.clone().err(), first_epoch.err()]
                    .into_iter()
                    .flatten()
                    .collect::<Vec<_>>()
                    .join("; ")
            ),
        ),
    };
    emit(Line {
        name: "training-sanity",
        pass,
        detail,
        elapsed,
    });

    // End to end, on the network trained above.
    let t0 = Instant::now();
    let (pass, detail, table) = match trained {
        Ok(out) => {
            if let Ok(p) = std::env::var("SEGTRACK_ACCEPTANCE_WEIGHTS") {
                let _ = out.network.save(p);
            }
            match end_to_end(Arc::new(out.network)) {
                Ok((r, table)) => {
                    let get = |a: Ablation| r.iter().find(|v| v.variant == a).expect("variant");
                    let full = get(Ablation::Full);
                    let (ao, j) = (full.ao(), full.j().unwrap_or(0.0));
                    let l_worse = get(Ablation::NoL).failures() > get(Ablation::NoF).failures().max(get(Ablation::NoP).failures());
                    let acc = |a: Ablation| get(a).accuracy().unwrap_or(0.0);
                    let minmax_lower = acc(Ablation::MinMax) < acc(Ablation::Full);
                    (
                        ao >= 0.6 && j >= 0.6 && l_worse && minmax_lower,
                        format!("AO {ao:.3}, J {j:.3}; no-l failures exceed no-f/no-p: {l_worse}; min-max accuracy below full: {minmax_lower}"),
                        table,
                    )
                }
                Err(e) => (false, format!("error: {e}"), Vec::new()),
            }
        }
        Err(e) => (false, format!("no trained network: {e}"), Vec::new()),
    };
    let elapsed = t0.elapsed();
    emit(Line {
        name: "end-to-end-synthetic",
        pass: pass && elapsed < Duration::from_secs(900),
        detail,
        elapsed,
    });
    for row in table {
        println!("{row}");
    }

    let failed = lines.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
