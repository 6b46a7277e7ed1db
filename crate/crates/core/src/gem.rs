//! Correlation-filter localization and the location channel.
//!
//! The filter is a multi-channel ridge regression solved independently per
//! Fourier frequency: for training features `X_c` and label `Y`,
//! `H_c = X_c·conj(Y) / (Σ_c |X_c|² + λ)`. Numerator and the shared
//! denominator are kept separately so that online updates are a running
//! average of both.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Pelu, Tensor};

pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_UPDATE_RATE: f64 = 0.1;
/// Label width as a fraction of the target extent on the grid.
pub const LABEL_SIGMA_FACTOR: f64 = 0.1;
/// Smallest label width in grid cells.
pub const MIN_LABEL_SIGMA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfConfig {
    pub lambda: f64,
    pub sigma_factor: f64,
    pub min_sigma: f64,
    pub update_rate: f64,
    pub cosine_window: bool,
    pub pelu: Pelu,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            lambda: DEFAULT_LAMBDA,
            sigma_factor: LABEL_SIGMA_FACTOR,
            min_sigma: MIN_LABEL_SIGMA,
            update_rate: DEFAULT_UPDATE_RATE,
            cosine_window: true,
            pelu: Pelu::default(),
        }
    }
}

impl DcfConfig {
    pub fn label_sigma(&self, target_extent: f64) -> f64 {
        (self.sigma_factor * target_extent).max(self.min_sigma)
    }
}

/// Position on the model grid in cells, `(row, col)`; may be fractional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPos {
    pub row: f64,
    pub col: f64,
}

impl GridPos {
    pub const fn new(row: f64, col: f64) -> Self {
        GridPos { row, col }
    }
}

/// Planned forward and inverse 2-D transforms for one grid size.
#[derive(Clone)]
struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: p.plan_fft_forward(w),
            row_inv: p.plan_fft_inverse(w),
            col_fwd: p.plan_fft_forward(h),
            col_inv: p.plan_fft_inverse(h),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        for r in data.chunks_exact_mut(self.w) {
            row.process(r);
        }
        let mut column = vec![Complex64::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                column[y] = data[y * self.w + x];
            }
            col.process(&mut column);
            for y in 0..self.h {
                data[y * self.w + x] = column[y];
            }
        }
        if inverse {
            let n = (self.h * self.w) as f64;
            for v in data.iter_mut() {
                *v /= n;
            }
        }
    }

    fn forward_real(&self, src: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut d, false);
        d
    }
}

/// Hann window over both grid axes.
pub fn cosine_window(h: usize, w: usize) -> Vec<f64> {
    let hann = |n: usize| -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
    };
    let (wy, wx) = (hann(h), hann(w));
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(wy[y] * wx[x]);
        }
    }
    out
}

/// Gaussian label on the grid with circular (wrap-around) distance, value 1
/// at `center` when it falls on a cell.
pub fn gaussian_label(h: usize, w: usize, center: GridPos, sigma: f64) -> Tensor {
    let mut t = Tensor::zeros(&[1, h, w]);
    let wrap = |d: f64, n: usize| {
        let n = n as f64;
        let d = d.rem_euclid(n);
        d.min(n - d)
    };
    for y in 0..h {
        let dy = wrap(y as f64 - center.row, h);
        for x in 0..w {
            let dx = wrap(x as f64 - center.col, w);
            t.set3(0, y, x, (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    t
}

/// Fourier-domain ridge-regression filter.
#[derive(Clone, Debug)]
pub struct CorrelationFilter {
    /// Per channel, `[h·w]` complex numerators.
    pub numerator: Vec<Vec<Complex64>>,
    /// Shared per-frequency denominator, every entry ≥ λ.
    pub denominator: Vec<f64>,
    pub label: Tensor,
    pub config: DcfConfig,
    pub sigma: f64,
    shape: (usize, usize, usize),
    fft: Fft2,
    window: Vec<f64>,
}

struct Statistics {
    numerator: Vec<Vec<Complex64>>,
    denominator: Vec<f64>,
    label: Tensor,
}

impl CorrelationFilter {
    pub fn channels(&self) -> usize {
        self.shape.0
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.shape.1, self.shape.2)
    }

    /// Spatial filter of channel `c` (real part of the inverse transform).
    pub fn spatial_filter(&self, c: usize) -> Vec<f64> {
        let mut d: Vec<Complex64> = self.numerator[c].iter().zip(&self.denominator).map(|(n, &den)| n / den).collect();
        self.fft.run(&mut d, true);
        d.iter().map(|v| v.re).collect()
    }

    /// True when the stored statistics are identical.
    pub fn same_statistics(&self, other: &CorrelationFilter) -> bool {
        self.numerator == other.numerator && self.denominator == other.denominator
    }

    fn windowed_spectrum(&self, features: &Tensor) -> Result<Vec<Vec<Complex64>>> {
        let (c, h, w) = features.dims3()?;
        if (c, h, w) != self.shape {
            return Err(shape_err(format!("features {:?} do not match filter {:?}", features.shape(), self.shape)));
        }
        Ok((0..c)
            .map(|ch| {
                let src = features.channel(ch);
                if self.config.cosine_window {
                    let v: Vec<f64> = src.iter().zip(&self.window).map(|(a, b)| a * b).collect();
                    self.fft.forward_real(&v)
                } else {
                    self.fft.forward_real(src)
                }
            })
            .collect())
    }

    fn statistics(&self, features: &Tensor, center: GridPos) -> Result<Statistics> {
        let (h, w) = self.grid();
        let spectra = self.windowed_spectrum(features)?;
        let label = gaussian_label(h, w, center, self.sigma);
        let y = self.fft.forward_real(label.data());
        let mut denominator = vec![self.config.lambda; h * w];
        for s in &spectra {
            for (d, v) in denominator.iter_mut().zip(s) {
                *d += v.norm_sqr();
            }
        }
        let numerator = spectra
            .into_iter()
            .map(|s| s.iter().zip(&y).map(|(x, yy)| x * yy.conj()).collect())
            .collect();
        Ok(Statistics {
            numerator,
            denominator,
            label,
        })
    }
}

/// Train a filter on `features` (`[C, h, w]`) with the label centered at
/// `target_center`; `target_extent` (grid cells) sets the label width.
pub fn train_dcf(features: &Tensor, target_center: GridPos, target_extent: f64, config: &DcfConfig) -> Result<CorrelationFilter> {
    if !(config.lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", config.lambda)));
    }
    if !(0.0..=1.0).contains(&config.update_rate) {
        return Err(Error::InvalidParameter("update rate must lie in [0, 1]".into()));
    }
    let (c, h, w) = features.dims3()?;
    check_center(target_center, h, w)?;
    let mut f = CorrelationFilter {
        numerator: Vec::new(),
        denominator: Vec::new(),
        label: Tensor::zeros(&[1, h, w]),
        config: *config,
        sigma: config.label_sigma(target_extent),
        shape: (c, h, w),
        fft: Fft2::new(h, w),
        window: cosine_window(h, w),
    };
    let s = f.statistics(features, target_center)?;
    f.numerator = s.numerator;
    f.denominator = s.denominator;
    f.label = s.label;
    Ok(f)
}

fn check_center(c: GridPos, h: usize, w: usize) -> Result<()> {
    if !(c.row >= 0.0 && c.col >= 0.0 && c.row <= (h - 1) as f64 && c.col <= (w - 1) as f64) {
        return Err(Error::InvalidParameter(format!("center ({}, {}) is off the {h}x{w} grid", c.row, c.col)));
    }
    Ok(())
}

/// Correlation response after PeLU, with its argmax.
#[derive(Clone, Debug)]
pub struct Response {
    pub map: Tensor,
    /// Linear response before the nonlinearity.
    pub raw: Tensor,
    pub peak: (usize, usize),
}

impl Response {
    /// Peak refined by a separable parabola through the neighbouring cells
    /// (circular neighbours), offset clamped to half a cell.
    pub fn subcell_peak(&self) -> GridPos {
        let (_, h, w) = self.raw.dims3().expect("3-d response");
        let (r, c) = self.peak;
        let at = |y: usize, x: usize| self.raw.at3(0, y, x);
        let offset = |m: f64, z: f64, p: f64| {
            let den = m - 2.0 * z + p;
            if den < 0.0 {
                (0.5 * (m - p) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        };
        let dy = offset(at((r + h - 1) % h, c), at(r, c), at((r + 1) % h, c));
        let dx = offset(at(r, (c + w - 1) % w), at(r, c), at(r, (c + 1) % w));
        GridPos::new((r as f64 + dy).clamp(0.0, (h - 1) as f64), (c as f64 + dx).clamp(0.0, (w - 1) as f64))
    }
}

/// Circular correlation of the filter with `features`, summed over channels.
pub fn apply_dcf(filter: &CorrelationFilter, features: &Tensor) -> Result<Response> {
    let (h, w) = filter.grid();
    let spectra = filter.windowed_spectrum(features)?;
    let mut acc = vec![Complex64::default(); h * w];
    for (z, num) in spectra.iter().zip(&filter.numerator) {
        for k in 0..h * w {
            acc[k] += (num[k] / filter.denominator[k]).conj() * z[k];
        }
    }
    filter.fft.run(&mut acc, true);
    let raw = Tensor::from_vec(&[1, h, w], acc.iter().map(|v| v.re).collect())?;
    let mut map = raw.clone();
    for v in map.data_mut() {
        *v = filter.config.pelu.eval(*v);
    }
    let peak = argmax(&map);
    Ok(Response { map, raw, peak })
}

/// Index of the maximum; ties go to the smallest row, then column.
pub fn argmax(map: &Tensor) -> (usize, usize) {
    let w = map.shape()[map.shape().len() - 1];
    let mut best = 0;
    for (i, &v) in map.data().iter().enumerate() {
        if v > map.data()[best] {
            best = i;
        }
    }
    (best / w, best % w)
}

/// Blend in statistics from the current frame: `(1−η)·old + η·new` for both
/// numerator and denominator.
pub fn update_dcf(filter: &mut CorrelationFilter, features: &Tensor, new_center: GridPos, eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("update rate {eta} outside [0, 1]")));
    }
    if eta == 0.0 {
        return Ok(());
    }
    let (h, w) = filter.grid();
    check_center(new_center, h, w)?;
    let s = filter.statistics(features, new_center)?;
    for (old, new) in filter.numerator.iter_mut().zip(&s.numerator) {
        for (o, n) in old.iter_mut().zip(new) {
            *o = *o * (1.0 - eta) + n * eta;
        }
    }
    for (o, n) in filter.denominator.iter_mut().zip(&s.denominator) {
        *o = *o * (1.0 - eta) + n * eta;
    }
    Ok(())
}

/// `L_i = 1 − d_i / d_diag`, with `d_i` the Euclidean distance from cell `i`
/// to `center` and `d_diag` the grid diagonal. Clamped at zero for centers
/// that lie off the grid.
pub fn location_channel(center: GridPos, h: usize, w: usize) -> Tensor {
    let diag = (((h - 1) * (h - 1) + (w - 1) * (w - 1)) as f64).sqrt().max(1.0);
    let mut t = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - center.row).powi(2) + (x as f64 - center.col).powi(2)).sqrt();
            t.set3(0, y, x, (1.0 - d / diag).max(0.0));
        }
    }
    t
}
