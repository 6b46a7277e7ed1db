//! Procedural video sequences with exact segmentation ground truth.
//!
//! A textured, deforming superellipse moves over a textured background,
//! bouncing off the frame borders while it rotates and pulsates in scale. A
//! distractor with the same appearance but its own motion is drawn beneath
//! it. Frames are rendered on demand from the sequence parameters, so a
//! sequence costs nothing until a frame is requested.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxfit::Mask;
use crate::geometry::Point;
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    /// Range of the target's major semi-axis in pixels.
    pub semi_major: (f64, f64),
    /// Range of the per-frame speed in pixels.
    pub speed: (f64, f64),
    /// Largest rotation per frame in radians.
    pub max_spin: f64,
    /// Amplitude of the boundary deformation relative to the radius.
    pub max_deformation: f64,
    pub distractor: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 160,
            height: 120,
            length: 60,
            semi_major: (13.0, 19.0),
            speed: (1.0, 3.0),
            max_spin: 0.04,
            max_deformation: 0.12,
            distractor: true,
        }
    }
}

/// Shape, appearance and motion of one moving blob.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Blob {
    a: f64,
    b: f64,
    /// Superellipse exponent; 2 is an ellipse.
    exponent: f64,
    lobes: f64,
    deformation: f64,
    deform_rate: f64,
    start: Point,
    velocity: Point,
    angle0: f64,
    spin: f64,
    scale_amp: f64,
    scale_rate: f64,
    phase: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig, shrink: f64) -> Self {
        let a = rng.gen_range(cfg.semi_major.0..cfg.semi_major.1) * shrink;
        let aspect = rng.gen_range(1.3..2.0);
        let speed = rng.gen_range(cfg.speed.0..cfg.speed.1);
        let heading = rng.gen_range(0.0..2.0 * PI);
        let margin = a * 1.3 + 2.0;
        Blob {
            a,
            b: a / aspect,
            exponent: rng.gen_range(2.0..3.5),
            lobes: [2.0, 3.0][rng.gen_range(0..2)],
            deformation: rng.gen_range(0.0..cfg.max_deformation),
            deform_rate: rng.gen_range(0.05..0.2),
            start: Point::new(
                rng.gen_range(margin..(cfg.width as f64 - margin).max(margin + 1.0)),
                rng.gen_range(margin..(cfg.height as f64 - margin).max(margin + 1.0)),
            ),
            velocity: Point::new(speed * heading.cos(), speed * heading.sin()),
            angle0: rng.gen_range(0.0..PI),
            spin: rng.gen_range(-cfg.max_spin..cfg.max_spin),
            scale_amp: rng.gen_range(0.0..0.15),
            scale_rate: rng.gen_range(0.03..0.1),
            phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn pose(&self, t: usize, w: usize, h: usize) -> (Point, f64, f64) {
        let t = t as f64;
        let scale = 1.0 + self.scale_amp * (self.scale_rate * t + self.phase).sin();
        let margin = self.a * (1.0 + self.deformation) * 1.15 + 1.0;
        let bounce = |x0: f64, v: f64, lo: f64, hi: f64| {
            if hi <= lo {
                return (lo + hi) / 2.0;
            }
            let span = hi - lo;
            let p = (x0 - lo + v * t).rem_euclid(2.0 * span);
            lo + if p <= span { p } else { 2.0 * span - p }
        };
        let c = Point::new(
            bounce(self.start.x, self.velocity.x, margin, w as f64 - 1.0 - margin),
            bounce(self.start.y, self.velocity.y, margin, h as f64 - 1.0 - margin),
        );
        (c, self.angle0 + self.spin * t, scale)
    }

    /// Local texture coordinates of pixel `p` if it lies inside at time `t`.
    fn local(&self, p: Point, t: usize, w: usize, h: usize) -> Option<(f64, f64)> {
        let (c, angle, scale) = self.pose(t, w, h);
        let (s, co) = angle.sin_cos();
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        let u = (dx * co + dy * s) / scale;
        let v = (-dx * s + dy * co) / scale;
        let phi = v.atan2(u);
        let r = ((u / self.a).abs().powf(self.exponent) + (v / self.b).abs().powf(self.exponent)).powf(1.0 / self.exponent);
        let limit = 1.0 + self.deformation * (self.lobes * phi + self.deform_rate * t as f64 + self.phase).sin();
        (r <= limit).then_some((u, v))
    }
}

/// Color pattern shared by the target and the distractor.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Appearance {
    base: [f64; 3],
    stripe: [f64; 3],
    frequency: f64,
}

impl Appearance {
    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let s = 0.5 + 0.5 * (self.frequency * u).sin() * (0.7 * self.frequency * v).cos();
        [0, 1, 2].map(|c| self.base[c] * (1.0 - s) + self.stripe[c] * s)
    }
}

/// Low-frequency color waves plus fine noise.
#[derive(Clone, Debug, PartialEq)]
struct Background {
    waves: Vec<(f64, f64, f64, [f64; 3])>,
    mean: [f64; 3],
    noise_seed: u64,
}

impl Background {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..5)
            .map(|_| {
                let f = rng.gen_range(0.02..0.15);
                let th = rng.gen_range(0.0..PI);
                let ph = rng.gen_range(0.0..2.0 * PI);
                let amp = [0, 1, 2].map(|_| rng.gen_range(-0.12..0.12));
                (f * th.cos(), f * th.sin(), ph, amp)
            })
            .collect();
        Background {
            waves,
            mean: [0, 1, 2].map(|_| rng.gen_range(0.25..0.75)),
            noise_seed: rng.gen(),
        }
    }

    fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let mut c = self.mean;
        for &(fx, fy, ph, amp) in &self.waves {
            let s = (fx * x as f64 + fy * y as f64 + ph).sin();
            for k in 0..3 {
                c[k] += amp[k] * s;
            }
        }
        let n = hash_noise(self.noise_seed, x, y) * 0.04;
        c.map(|v| (v + n).clamp(0.0, 1.0))
    }
}

/// Deterministic per-pixel noise in [-1, 1].
fn hash_noise(seed: u64, x: usize, y: usize) -> f64 {
    let mut h = seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// One procedurally generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub seed: u64,
    pub config: SynthConfig,
    target: Blob,
    distractor: Option<Blob>,
    look: Appearance,
    background: Background,
}

impl SyntheticSequence {
    pub fn new(seed: u64, config: SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = Blob::random(&mut rng, &config, 1.0);
        let distractor = Blob::random(&mut rng, &config, 0.9);
        let look = loop {
            let base = [0, 1, 2].map(|_| rng.gen_range(0.0..1.0));
            let stripe = [0, 1, 2].map(|_| rng.gen_range(0.0..1.0));
            // Keep the target distinguishable from the background mean.
            let a = Appearance {
                base,
                stripe,
                frequency: rng.gen_range(0.3..0.8),
            };
            let d: f64 = (0..3).map(|k| (a.base[k] - 0.5).abs() + (a.stripe[k] - 0.5).abs()).sum();
            if d > 0.8 {
                break a;
            }
        };
        let background = Background::random(&mut rng);
        SyntheticSequence {
            seed,
            config,
            target,
            distractor: config.distractor.then_some(distractor),
            look,
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.config.length
    }

    pub fn is_empty(&self) -> bool {
        self.config.length == 0
    }

    /// Frame `t` as `[3, H, W]` in `[0, 1]` with its target mask.
    pub fn frame(&self, t: usize) -> (Tensor, Mask) {
        let (w, h) = (self.config.width, self.config.height);
        let mut img = Tensor::zeros(&[3, h, w]);
        let mut mask = Mask::new(w, h);
        let plane = w * h;
        for y in 0..h {
            for x in 0..w {
                let p = Point::new(x as f64, y as f64);
                let color = if let Some((u, v)) = self.target.local(p, t, w, h) {
                    mask.set(x, y, true);
                    self.look.at(u, v)
                } else if let Some((u, v)) = self.distractor.as_ref().and_then(|d| d.local(p, t, w, h)) {
                    self.look.at(u, v)
                } else {
                    self.background.at(x, y)
                };
                for c in 0..3 {
                    img.data_mut()[c * plane + y * w + x] = color[c];
                }
            }
        }
        (img, mask)
    }

    pub fn render_all(&self) -> (Vec<Tensor>, Vec<Mask>) {
        (0..self.len()).map(|t| self.frame(t)).unzip()
    }
}

/// Two frames of one sequence no more than `range` frames apart.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub train_frame: Tensor,
    pub train_mask: Mask,
    pub test_frame: Tensor,
    pub test_mask: Mask,
    pub indices: (usize, usize),
}

pub fn sample_pair(seq: &SyntheticSequence, range: usize, rng: &mut impl Rng) -> SamplePair {
    let n = seq.len();
    let i = rng.gen_range(0..n);
    let lo = i.saturating_sub(range);
    let hi = (i + range).min(n - 1);
    let j = rng.gen_range(lo..=hi);
    let (train_frame, train_mask) = seq.frame(i);
    let (test_frame, test_mask) = seq.frame(j);
    SamplePair {
        train_frame,
        train_mask,
        test_frame,
        test_mask,
        indices: (i, j),
    }
}

/// Pair drawn from the sequence with the given seed.
pub fn generate_synthetic_sample(seed: u64, config: &SynthConfig, range: usize) -> SamplePair {
    let seq = SyntheticSequence::new(seed, *config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A_5A5A);
    sample_pair(&seq, range, &mut rng)
}
