//! Search-region extraction and the hand-crafted feature pyramid.
//!
//! The base channels are RGB (centered at zero), horizontal and vertical
//! intensity gradients and an 8-bin soft histogram of unsigned gradient
//! orientation weighted by magnitude. They are average-pooled to strides 2, 4
//! and 8 of the crop. The stride-8 level feeds both target models: the GIM
//! branch through two trainable adjustment layers, the correlation filter
//! through a fixed, mean-centered embedding.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::boxfit::Mask;
use crate::error::{shape_err, Error, Result};
use crate::geometry::Point;
use crate::nn::{conv2d, conv2d_backward, relu, relu_backward_from_output, Checkpoint, LayerParams, Tensor};

/// Stride of the model-resolution grid relative to the crop.
pub const MODEL_STRIDE: usize = 8;
/// Pyramid strides, finest first.
pub const PYRAMID_STRIDES: [usize; 3] = [2, 4, 8];
/// Channel count of the reduced model features.
pub const FEATURE_DIM: usize = 64;
/// Hand-crafted base channels: 3 color + 2 gradient + 8 orientation bins.
pub const BASE_CHANNELS: usize = 13;
pub const ORIENTATION_BINS: usize = 8;
/// Search-region side relative to the geometric-mean target size.
pub const CONTEXT_FACTOR: f64 = 4.0;

/// Crop size and trunk width of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub crop_size: usize,
    /// Channels of the refinement trunk.
    pub trunk_channels: usize,
}

impl Geometry {
    /// 384-pixel crops, 64-channel trunk.
    pub const fn full() -> Self {
        Geometry {
            crop_size: 384,
            trunk_channels: 64,
        }
    }

    /// Reduced geometry that trains in minutes on one CPU core.
    pub const fn desk() -> Self {
        Geometry {
            crop_size: 128,
            trunk_channels: 16,
        }
    }

    pub fn grid(&self) -> usize {
        self.crop_size / MODEL_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.crop_size % MODEL_STRIDE != 0 {
            return Err(Error::InvalidParameter(format!(
                "crop size {} must be a positive multiple of {MODEL_STRIDE}",
                self.crop_size
            )));
        }
        if self.trunk_channels == 0 {
            return Err(Error::InvalidParameter("trunk channels must be positive".into()));
        }
        Ok(())
    }
}

/// Square crop around the target plus the mapping back to the frame.
#[derive(Clone, Debug)]
pub struct SearchRegion {
    pub image_crop: Tensor,
    pub center_in_frame: Point,
    /// Frame pixels per crop pixel.
    pub scale: f64,
    pub frame_size: (usize, usize),
}

impl SearchRegion {
    pub fn crop_size(&self) -> usize {
        self.image_crop.shape()[2]
    }

    fn half(&self) -> f64 {
        (self.crop_size() as f64 - 1.0) / 2.0
    }

    pub fn crop_to_frame(&self, p: Point) -> Point {
        let h = self.half();
        Point::new(
            self.center_in_frame.x + (p.x - h) * self.scale,
            self.center_in_frame.y + (p.y - h) * self.scale,
        )
    }

    pub fn frame_to_crop(&self, p: Point) -> Point {
        let h = self.half();
        Point::new(
            (p.x - self.center_in_frame.x) / self.scale + h,
            (p.y - self.center_in_frame.y) / self.scale + h,
        )
    }

    /// Nearest-neighbour resampling of a frame mask into crop coordinates;
    /// pixels outside the frame are background.
    pub fn crop_mask(&self, mask: &Mask) -> Mask {
        let s = self.crop_size();
        Mask::from_fn(s, s, |u, v| {
            let p = self.crop_to_frame(Point::new(u as f64, v as f64));
            let (x, y) = (p.x.round(), p.y.round());
            x >= 0.0 && y >= 0.0 && mask.get_signed(x as isize, y as isize)
        })
    }

    /// Nearest-neighbour resampling of a crop mask back onto the frame.
    pub fn uncrop_mask(&self, crop: &Mask) -> Mask {
        let (w, h) = self.frame_size;
        let s = crop.width() as isize;
        Mask::from_fn(w, h, |x, y| {
            let p = self.frame_to_crop(Point::new(x as f64, y as f64));
            let (u, v) = (p.x.round() as isize, p.y.round() as isize);
            u >= 0 && v >= 0 && u < s && v < s && crop.get(u as usize, v as usize)
        })
    }
}

/// Crop a square of side `4·sqrt(w·h)` centered on the target and resample it
/// bilinearly to `crop_size`; out-of-frame samples replicate the nearest edge.
/// `frame` is `[3, H, W]`.
pub fn extract_search_region(frame: &Tensor, target_center: Point, target_size: (f64, f64), crop_size: usize) -> Result<SearchRegion> {
    let (c, h, w) = frame.dims3()?;
    if c != 3 {
        return Err(shape_err(format!("frame must have 3 channels, got {c}")));
    }
    let (tw, th) = target_size;
    if !(tw > 0.0 && th > 0.0) || !tw.is_finite() || !th.is_finite() {
        return Err(Error::Degenerate(format!("target size {tw}x{th}")));
    }
    if crop_size == 0 {
        return Err(Error::InvalidParameter("crop size must be positive".into()));
    }
    let side = CONTEXT_FACTOR * (tw * th).sqrt();
    let scale = side / crop_size as f64;
    let mut region = SearchRegion {
        image_crop: Tensor::zeros(&[3, crop_size, crop_size]),
        center_in_frame: target_center,
        scale,
        frame_size: (w, h),
    };
    let mut xs = Vec::with_capacity(crop_size);
    for u in 0..crop_size {
        xs.push(sample_coord(region.crop_to_frame(Point::new(u as f64, 0.0)).x, w));
    }
    let ys: Vec<_> = (0..crop_size)
        .map(|v| sample_coord(region.crop_to_frame(Point::new(0.0, v as f64)).y, h))
        .collect();
    let plane = crop_size * crop_size;
    let src = frame.data();
    let out = region.image_crop.data_mut();
    for (v, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (u, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..3 {
                let base = ch * w * h;
                let top = src[base + y0 * w + x0] * (1.0 - fx) + src[base + y0 * w + x1] * fx;
                let bot = src[base + y1 * w + x0] * (1.0 - fx) + src[base + y1 * w + x1] * fx;
                out[ch * plane + v * crop_size + u] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(region)
}

/// Clamp a continuous coordinate into `[0, n-1]` and return the two taps and
/// the weight of the upper one.
fn sample_coord(x: f64, n: usize) -> (usize, usize, f64) {
    let x = x.clamp(0.0, (n - 1) as f64);
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(n - 1);
    (x0, x1, x - x0 as f64)
}

/// Per-pixel base channels of a `[3, S, S]` crop.
pub fn base_channels(crop: &Tensor) -> Result<Tensor> {
    let (c, h, w) = crop.dims3()?;
    if c != 3 {
        return Err(shape_err(format!("crop must have 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[BASE_CHANNELS, h, w]);
    let src = crop.data();
    let gray: Vec<f64> = (0..plane).map(|i| (src[i] + src[plane + i] + src[2 * plane + i]) / 3.0).collect();
    let o = out.data_mut();
    for i in 0..3 * plane {
        o[i] = src[i] - 0.5;
    }
    for y in 0..h {
        for x in 0..w {
            let g = |xx: usize, yy: usize| gray[yy * w + xx];
            let gx = (g((x + 1).min(w - 1), y) - g(x.saturating_sub(1), y)) / 2.0;
            let gy = (g(x, (y + 1).min(h - 1)) - g(x, y.saturating_sub(1))) / 2.0;
            let i = y * w + x;
            o[3 * plane + i] = gx;
            o[4 * plane + i] = gy;
            for (bin, weight) in orientation_weights(gx, gy) {
                o[(5 + bin) * plane + i] += weight;
            }
        }
    }
    Ok(out)
}

/// Soft assignment of the gradient magnitude to the two nearest of eight
/// unsigned-orientation bins. Bin `k` is centered at `k·π/8`, so bin 0 holds
/// purely horizontal gradients (vertical edges).
pub fn orientation_weights(gx: f64, gy: f64) -> [(usize, f64); 2] {
    let mag = (gx * gx + gy * gy).sqrt();
    if mag == 0.0 {
        return [(0, 0.0), (1, 0.0)];
    }
    let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
    let pos = theta / (std::f64::consts::PI / ORIENTATION_BINS as f64);
    let lo = (pos.floor() as usize) % ORIENTATION_BINS;
    let hi = (lo + 1) % ORIENTATION_BINS;
    let f = pos - pos.floor();
    [(lo, mag * (1.0 - f)), (hi, mag * f)]
}

/// Non-overlapping `k×k` average pooling; extents must divide evenly.
pub fn avg_pool(input: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if h % k != 0 || w % k != 0 {
        return Err(shape_err(format!("{h}x{w} is not divisible by pool size {k}")));
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let norm = 1.0 / (k * k) as f64;
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[(y / k) * ow..(y / k + 1) * ow];
            for (x, &v) in row.iter().enumerate() {
                drow[x / k] += v;
            }
        }
        for v in dst.iter_mut() {
            *v *= norm;
        }
    }
    Ok(out)
}

/// Feature maps at strides 2, 4 and 8 of the crop.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 3],
}

impl FeaturePyramid {
    pub fn level(&self, stride: usize) -> Option<&Tensor> {
        PYRAMID_STRIDES.iter().position(|&s| s == stride).map(|i| &self.levels[i])
    }

    /// Stride-8 level.
    pub fn model_level(&self) -> &Tensor {
        &self.levels[2]
    }

    pub fn channels(&self) -> [usize; 3] {
        [self.levels[0].shape()[0], self.levels[1].shape()[0], self.levels[2].shape()[0]]
    }

    /// Check that level extents are exactly `crop/stride`.
    pub fn validate(&self, crop_size: usize) -> Result<()> {
        for (t, s) in self.levels.iter().zip(PYRAMID_STRIDES) {
            let (_, h, w) = t.dims3()?;
            if h != crop_size / s || w != crop_size / s {
                return Err(shape_err(format!(
                    "stride-{s} level is {h}x{w}, expected {0}x{0}",
                    crop_size / s
                )));
            }
        }
        Ok(())
    }
}

/// Source of the multi-stride feature maps for a search region.
pub trait Backbone: Send + Sync {
    /// `frame_index` identifies the frame for backbones that read stored maps.
    fn pyramid(&self, region: &SearchRegion, frame_index: usize) -> Result<FeaturePyramid>;

    /// Channel counts of the three levels, finest first.
    fn channels(&self) -> [usize; 3];
}

/// Color, gradient and orientation channels with average pooling.
#[derive(Clone, Copy, Debug, Default)]
pub struct HandCrafted;

impl Backbone for HandCrafted {
    fn pyramid(&self, region: &SearchRegion, _frame_index: usize) -> Result<FeaturePyramid> {
        compute_pyramid(&region.image_crop)
    }

    fn channels(&self) -> [usize; 3] {
        [BASE_CHANNELS; 3]
    }
}

pub fn compute_pyramid(crop: &Tensor) -> Result<FeaturePyramid> {
    let base = base_channels(crop)?;
    let l2 = avg_pool(&base, 2)?;
    let l4 = avg_pool(&l2, 2)?;
    let l8 = avg_pool(&l4, 2)?;
    Ok(FeaturePyramid { levels: [l2, l4, l8] })
}

/// Feature maps produced by an external network, stored one file per frame
/// per level as `{dir}/{frame:05}_s{stride}.bin` in checkpoint format with a
/// single tensor entry named `features`.
#[derive(Clone, Debug)]
pub struct Precomputed {
    pub dir: PathBuf,
    pub channels: [usize; 3],
}

impl Precomputed {
    pub fn path(dir: &Path, frame_index: usize, stride: usize) -> PathBuf {
        dir.join(format!("{frame_index:05}_s{stride}.bin"))
    }

    pub fn write(dir: &Path, frame_index: usize, pyramid: &FeaturePyramid) -> Result<()> {
        for (t, s) in pyramid.levels.iter().zip(PYRAMID_STRIDES) {
            let mut ck = Checkpoint::new();
            ck.insert("features", t.clone());
            ck.save(Self::path(dir, frame_index, s))?;
        }
        Ok(())
    }
}

impl Backbone for Precomputed {
    fn pyramid(&self, region: &SearchRegion, frame_index: usize) -> Result<FeaturePyramid> {
        let mut levels = Vec::with_capacity(3);
        for (i, s) in PYRAMID_STRIDES.into_iter().enumerate() {
            let ck = Checkpoint::load(Self::path(&self.dir, frame_index, s))?;
            let t = ck.require("features")?.clone();
            if t.shape().len() != 3 || t.shape()[0] != self.channels[i] {
                return Err(shape_err(format!(
                    "stored stride-{s} features have shape {:?}, expected {} channels",
                    t.shape(),
                    self.channels[i]
                )));
            }
            levels.push(t);
        }
        let levels: [Tensor; 3] = levels.try_into().expect("three levels");
        let p = FeaturePyramid { levels };
        p.validate(region.crop_size())?;
        Ok(p)
    }

    fn channels(&self) -> [usize; 3] {
        self.channels
    }
}

/// Floor on the per-channel deviation in [`standardize_channels`].
pub const STANDARDIZE_EPS: f64 = 1e-2;

/// Per-channel zero mean and unit deviation over the region, with the
/// deviation floored so flat channels are not amplified into noise.
pub fn standardize_channels(level: &Tensor) -> Result<Tensor> {
    let (c, _, _) = level.dims3()?;
    let mut out = level.clone();
    for ch in 0..c {
        let v = out.channel_mut(ch);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + STANDARDIZE_EPS * STANDARDIZE_EPS).sqrt();
        for x in v.iter_mut() {
            *x = (*x - mean) * inv;
        }
    }
    Ok(out)
}

/// Trainable 1×1 reduction to 64 channels followed by a 3×3 layer, both with
/// ReLU; produces the GIM matching features. The input level is
/// standardized per channel first.
#[derive(Clone, Debug)]
pub struct FeatureAdjust {
    pub reduce: LayerParams,
    pub conv: LayerParams,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AdjustCache {
    input: Tensor,
    hidden: Tensor,
    output: Tensor,
}

impl AdjustCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl FeatureAdjust {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, rng: &mut R) -> Self {
        FeatureAdjust {
            reduce: LayerParams::kaiming(in_channels, FEATURE_DIM, 1, rng),
            conv: LayerParams::kaiming(FEATURE_DIM, FEATURE_DIM, 3, rng),
        }
    }

    pub fn forward(&self, level: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(level)?.output)
    }

    pub fn forward_cached(&self, level: &Tensor) -> Result<AdjustCache> {
        let input = standardize_channels(level)?;
        let hidden = relu(&conv2d(&input, &self.reduce)?);
        let output = relu(&conv2d(&hidden, &self.conv)?);
        Ok(AdjustCache {
            input,
            hidden,
            output,
        })
    }

    /// Accumulates parameter gradients; the input gradient is discarded since
    /// the hand-crafted channels are fixed.
    pub fn backward(&mut self, cache: &AdjustCache, grad_out: &Tensor) -> Result<()> {
        let g = relu_backward_from_output(&cache.output, grad_out);
        let g = conv2d_backward(&cache.hidden, &mut self.conv, &g)?;
        let g = relu_backward_from_output(&cache.hidden, &g);
        conv2d_backward(&cache.input, &mut self.reduce, &g)?;
        Ok(())
    }

    pub fn layers(&self) -> [&LayerParams; 2] {
        [&self.reduce, &self.conv]
    }

    pub fn layers_mut(&mut self) -> [&mut LayerParams; 2] {
        [&mut self.reduce, &mut self.conv]
    }
}

/// Fixed correlation-filter features: the stride-8 level with each channel
/// mean-centered, embedded in the first channels of a 64-channel tensor.
pub fn correlation_features(level: &Tensor) -> Result<Tensor> {
    let (c, h, w) = level.dims3()?;
    if c > FEATURE_DIM {
        return Err(shape_err(format!("{c} channels exceed the {FEATURE_DIM}-channel embedding")));
    }
    let mut out = Tensor::zeros(&[FEATURE_DIM, h, w]);
    for ch in 0..c {
        let src = level.channel(ch);
        let mean = src.iter().sum::<f64>() / src.len() as f64;
        for (d, &s) in out.channel_mut(ch).iter_mut().zip(src) {
            *d = s - mean;
        }
    }
    Ok(out)
}

/// Pyramid plus the reduced GIM features for one region.
pub fn compute_feature_pyramid(region: &SearchRegion, backbone: &dyn Backbone, adjust: &FeatureAdjust, frame_index: usize) -> Result<(FeaturePyramid, Tensor)> {
    let pyramid = backbone.pyramid(region, frame_index)?;
    let reduced = adjust.forward(pyramid.model_level())?;
    Ok((pyramid, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame_from_fn(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut t = Tensor::zeros(&[3, h, w]);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    t.set3(c, y, x, f(c, x, y));
                }
            }
        }
        t
    }

    #[test]
    fn region_side_is_four_geometric_mean() {
        let frame = Tensor::full(&[3, 50, 60], 0.3);
        let r = extract_search_region(&frame, Point::new(30.0, 25.0), (8.0, 2.0), 32).unwrap();
        assert!((r.scale * 32.0 - 16.0).abs() < 1e-12);
        assert!(extract_search_region(&frame, Point::new(30.0, 25.0), (0.0, 2.0), 32).is_err());
    }

    #[test]
    fn interior_target_lands_at_crop_center() {
        // Frame value encodes position so sampled values reveal the mapping.
        let frame = frame_from_fn(200, 160, |c, x, y| if c == 0 { x as f64 } else { y as f64 });
        let (cx, cy) = (100.0, 80.0);
        let r = extract_search_region(&frame, Point::new(cx, cy), (10.0, 10.0), 40).unwrap();
        // 40-pixel side, 40 crop pixels: unit scale.
        for v in 0..40 {
            for u in 0..40 {
                let p = r.crop_to_frame(Point::new(u as f64, v as f64));
                assert!((r.image_crop.at3(0, v, u) - p.x).abs() < 1e-9);
                assert!((r.image_crop.at3(1, v, u) - p.y).abs() < 1e-9);
            }
        }
        let mid = r.frame_to_crop(Point::new(cx, cy));
        assert!((mid.x - 19.5).abs() < 1e-12 && (mid.y - 19.5).abs() < 1e-12);
    }

    #[test]
    fn corner_target_replicates_edges() {
        let frame = frame_from_fn(20, 20, |_, x, y| (x * 20 + y) as f64 / 400.0);
        let r = extract_search_region(&frame, Point::new(0.0, 0.0), (5.0, 5.0), 20).unwrap();
        // Crop pixel (0,0) maps far outside the frame and must equal pixel (0,0).
        assert_eq!(r.image_crop.at3(0, 0, 0), frame.at3(0, 0, 0));
        let p = r.crop_to_frame(Point::new(2.0, 15.0));
        assert!(p.x < 0.0);
        let y = p.y.clamp(0.0, 19.0);
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let expect = frame.at3(1, y0, 0) * (1.0 - fy) + frame.at3(1, (y0 + 1).min(19), 0) * fy;
        assert!((r.image_crop.at3(1, 15, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn crop_frame_round_trip() {
        let frame = Tensor::full(&[3, 90, 120], 0.0);
        let r = extract_search_region(&frame, Point::new(47.3, 61.9), (13.0, 7.0), 128).unwrap();
        for &(x, y) in &[(0.0, 0.0), (47.3, 61.9), (100.5, 3.25)] {
            let q = r.crop_to_frame(r.frame_to_crop(Point::new(x, y)));
            assert!((q.x - x).abs() < 1e-9 && (q.y - y).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_crop_and_uncrop_agree_at_unit_scale() {
        let m = Mask::from_fn(64, 64, |x, y| (20..40).contains(&x) && (25..35).contains(&y));
        let frame = Tensor::zeros(&[3, 64, 64]);
        // side 4·sqrt(16·16) = 64 over 64 pixels.
        let r = extract_search_region(&frame, Point::new(31.5, 31.5), (16.0, 16.0), 64).unwrap();
        let c = r.crop_mask(&m);
        assert_eq!(c, m);
        assert_eq!(r.uncrop_mask(&c), m);
    }

    #[test]
    fn pyramid_level_shapes() {
        let crop = Tensor::full(&[3, 384, 384], 0.2);
        let p = compute_pyramid(&crop).unwrap();
        assert_eq!(p.levels[0].shape(), &[BASE_CHANNELS, 192, 192]);
        assert_eq!(p.levels[1].shape(), &[BASE_CHANNELS, 96, 96]);
        assert_eq!(p.levels[2].shape(), &[BASE_CHANNELS, 48, 48]);
        p.validate(384).unwrap();
    }

    #[test]
    fn constant_image_has_no_gradient_energy() {
        let crop = Tensor::full(&[3, 16, 16], 0.7);
        let b = base_channels(&crop).unwrap();
        for c in 3..BASE_CHANNELS {
            assert!(b.channel(c).iter().all(|&v| v == 0.0));
        }
        assert!((b.at3(0, 3, 3) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn vertical_edge_fills_horizontal_gradient_bin() {
        let crop = frame_from_fn(16, 16, |_, x, _| if x < 8 { 0.0 } else { 1.0 });
        let b = base_channels(&crop).unwrap();
        // Per-pixel oracle: central differences of the gray image.
        for y in 0..16 {
            for x in 0..16 {
                let g = |xx: usize| if xx < 8 { 0.0 } else { 1.0 };
                let gx = (g((x + 1).min(15)) - g(x.saturating_sub(1))) / 2.0;
                assert!((b.at3(3, y, x) - gx).abs() < 1e-12);
                assert_eq!(b.at3(4, y, x), 0.0);
                assert!((b.at3(5, y, x) - gx.abs()).abs() < 1e-12);
                for bin in 1..ORIENTATION_BINS {
                    assert_eq!(b.at3(5 + bin, y, x), 0.0);
                }
            }
        }
    }

    #[test]
    fn orientation_bins_split_mass_linearly() {
        let a = std::f64::consts::PI / 16.0;
        let w = orientation_weights(a.cos(), a.sin());
        assert_eq!((w[0].0, w[1].0), (0, 1));
        assert!((w[0].1 - 0.5).abs() < 1e-12 && (w[1].1 - 0.5).abs() < 1e-12);
        // Gradients pointing in opposite directions share a bin.
        let p = orientation_weights(0.0, 1.0);
        let n = orientation_weights(0.0, -1.0);
        assert_eq!(p[0].0, 4);
        assert_eq!(n[0].0, 4);
    }

    #[test]
    fn pooling_shifts_with_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let big = Tensor::uniform(&[3, 80, 80], 0.0, 1.0, &mut rng);
        let window = |ox: usize| {
            let mut t = Tensor::zeros(&[3, 64, 64]);
            for c in 0..3 {
                for y in 0..64 {
                    for x in 0..64 {
                        t.set3(c, y, x, big.at3(c, y, x + ox));
                    }
                }
            }
            t
        };
        let a = compute_pyramid(&window(0)).unwrap();
        let b = compute_pyramid(&window(8)).unwrap();
        let (la, lb) = (&a.levels[2], &b.levels[2]);
        // Interior cells away from the replicated border.
        for c in 0..BASE_CHANNELS {
            for y in 1..7 {
                for x in 1..6 {
                    assert!((la.at3(c, y, x + 1) - lb.at3(c, y, x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjust_produces_64_channels_on_model_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let adjust = FeatureAdjust::new(BASE_CHANNELS, &mut rng);
        let frame = Tensor::uniform(&[3, 100, 100], 0.0, 1.0, &mut rng);
        let r = extract_search_region(&frame, Point::new(50.0, 50.0), (20.0, 20.0), 384).unwrap();
        let (p, reduced) = compute_feature_pyramid(&r, &HandCrafted, &adjust, 0).unwrap();
        assert_eq!(reduced.shape(), &[FEATURE_DIM, 48, 48]);
        assert_eq!(p.channels(), [BASE_CHANNELS; 3]);
    }

    #[test]
    fn correlation_features_are_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = Tensor::uniform(&[BASE_CHANNELS, 6, 6], 0.0, 1.0, &mut rng);
        let f = correlation_features(&l).unwrap();
        assert_eq!(f.shape(), &[FEATURE_DIM, 6, 6]);
        for c in 0..FEATURE_DIM {
            assert!(f.channel(c).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn precomputed_features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let crop = Tensor::full(&[3, 32, 32], 0.5);
        let p = compute_pyramid(&crop).unwrap();
        Precomputed::write(dir.path(), 7, &p).unwrap();
        let frame = Tensor::zeros(&[3, 40, 40]);
        let r = extract_search_region(&frame, Point::new(20.0, 20.0), (8.0, 8.0), 32).unwrap();
        let backbone = Precomputed {
            dir: dir.path().to_path_buf(),
            channels: [BASE_CHANNELS; 3],
        };
        let q = backbone.pyramid(&r, 7).unwrap();
        // Stored as 32-bit floats.
        for (a, b) in p.levels.iter().zip(&q.levels) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
        assert!(matches!(backbone.pyramid(&r, 8), Err(Error::MissingFile(_))));
    }

    #[test]
    fn standardize_centers_and_scales_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tensor::uniform(&[3, 5, 5], -2.0, 6.0, &mut rng);
        t.channel_mut(2).iter_mut().for_each(|v| *v = 0.7);
        let s = standardize_channels(&t).unwrap();
        for c in 0..2 {
            let v = s.channel(c);
            let mean = v.iter().sum::<f64>() / 25.0;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-12);
            // Deviation is slightly under one because of the floor.
            assert!(var < 1.0 && var > 0.999, "{var}");
        }
        // A flat channel maps to zero rather than blowing up.
        assert!(s.channel(2).iter().all(|&v| v.abs() < 1e-9));
    }
}
