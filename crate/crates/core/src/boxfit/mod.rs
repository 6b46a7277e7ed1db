//! Segmentation map → binary mask → rotated bounding box.
//!
//! The main path fits an ellipse to the outline of the largest component and
//! then tunes the two box sides by coordinate descent on the modified overlap
//! score [`iou_mod`]. The axis-aligned and minimum-area alternatives are kept
//! for comparison.

mod ellipse;
mod mask;

pub use ellipse::{conic_to_ellipse, fit_ellipse_points, Ellipse};
pub use mask::Mask;

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, Point, RotatedBox};
use crate::nn::Tensor;

/// Background penalty in the modified overlap.
pub const DEFAULT_ALPHA: f64 = 0.25;
/// Maximum number of overlap evaluations per descent.
pub const EVALUATION_BUDGET: usize = 200;
const SHRINK: f64 = 0.95;
const GROW: f64 = 1.05;

/// Threshold the target channel of a `[2, H, W]` probability map at 0.5 and
/// keep the largest 8-connected component. Fails with [`Error::Degenerate`]
/// ("target lost") when nothing survives.
pub fn binarize_largest_component(prob: &Tensor) -> Result<Mask> {
    let (c, h, w) = prob.dims3()?;
    if c != 2 {
        return Err(Error::Shape(format!("expected 2-class map, got {c} channels")));
    }
    let fg = prob.channel(1);
    let raw = Mask::from_vec(w, h, fg.iter().map(|&p| p > 0.5).collect());
    let largest = raw.largest_component();
    if largest.is_empty() {
        return Err(Error::Degenerate("segmentation is empty: target lost".into()));
    }
    Ok(largest)
}

/// Initial box estimate and whether the min-area fallback was used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialBox {
    pub rbox: RotatedBox,
    pub fallback: bool,
}

/// Ellipse fitted to the component outline; falls back to the minimum-area
/// rectangle for fewer than six outline pixels or a non-elliptic fit.
pub fn fit_ellipse(mask: &Mask) -> Result<InitialBox> {
    if mask.is_empty() {
        return Err(Error::Degenerate("empty mask".into()));
    }
    let outline: Vec<Point> = mask
        .outline()
        .into_iter()
        .map(|(x, y)| Point::new(x as f64, y as f64))
        .collect();
    if outline.len() >= 6 {
        if let Some(e) = fit_ellipse_points(&outline) {
            let diag = ((mask.width().pow(2) + mask.height().pow(2)) as f64).sqrt();
            // Reject wildly extrapolated fits (near-parabolic outlines).
            if e.a.is_finite() && e.a < 4.0 * diag {
                return Ok(InitialBox {
                    rbox: e.bounding_box(),
                    fallback: false,
                });
            }
        }
    }
    Ok(InitialBox {
        rbox: min_area_box(&mask.foreground_points()),
        fallback: true,
    })
}

/// Pixel counts behind the modified overlap score.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoxFitStats {
    /// Foreground pixels inside the box.
    pub n_in_pos: usize,
    /// Background pixels inside the box.
    pub n_in_neg: usize,
    /// Foreground pixels outside the box.
    pub n_out_pos: usize,
    pub alpha: f64,
}

impl BoxFitStats {
    /// `N⁺_in / (α·N⁻_in + N⁺_in + N⁺_out)`; zero when every count is zero.
    pub fn score(&self) -> f64 {
        let den = self.alpha * self.n_in_neg as f64 + self.n_in_pos as f64 + self.n_out_pos as f64;
        if den == 0.0 {
            0.0
        } else {
            self.n_in_pos as f64 / den
        }
    }
}

/// Precomputed row prefix sums for repeated box evaluations on one mask.
pub struct MaskIndex<'a> {
    mask: &'a Mask,
    prefix: Vec<u32>,
    total: usize,
}

impl<'a> MaskIndex<'a> {
    pub fn new(mask: &'a Mask) -> Self {
        MaskIndex {
            prefix: mask.row_prefix_counts(),
            total: mask.count(),
            mask,
        }
    }

    /// Counts for a box rasterized by pixel centers.
    pub fn stats(&self, b: &RotatedBox, alpha: f64) -> BoxFitStats {
        let (w, h) = (self.mask.width(), self.mask.height());
        let w1 = w + 1;
        let corners = b.corners();
        let ymin = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let ymax = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let y0 = ymin.ceil().max(0.0) as usize;
        let y1 = (ymax.floor() as isize).min(h as isize - 1);
        let (mut inside, mut pos) = (0usize, 0usize);
        if y1 >= 0 {
            for y in y0..=y1 as usize {
                let Some((lo, hi)) = b.row_span(y as f64) else {
                    continue;
                };
                let x0 = lo.ceil().max(0.0);
                let x1 = hi.floor().min((w - 1) as f64);
                if x1 < x0 {
                    continue;
                }
                let (x0, x1) = (x0 as usize, x1 as usize);
                inside += x1 - x0 + 1;
                pos += (self.prefix[y * w1 + x1 + 1] - self.prefix[y * w1 + x0]) as usize;
            }
        }
        BoxFitStats {
            n_in_pos: pos,
            n_in_neg: inside - pos,
            n_out_pos: self.total - pos,
            alpha,
        }
    }
}

/// Modified overlap between a box and a mask.
pub fn iou_mod(b: &RotatedBox, mask: &Mask, alpha: f64) -> Result<(f64, BoxFitStats)> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be ≥ 0, got {alpha}")));
    }
    let stats = MaskIndex::new(mask).stats(b, alpha);
    Ok((stats.score(), stats))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentConfig {
    pub alpha: f64,
    /// Only ever shrink the sides (the literal "reduce" reading).
    pub shrink_only: bool,
    pub budget: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            alpha: DEFAULT_ALPHA,
            shrink_only: false,
            budget: EVALUATION_BUDGET,
        }
    }
}

/// Result of the rotated-box fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FittedBox {
    pub rbox: RotatedBox,
    pub initial: InitialBox,
    pub initial_score: f64,
    pub score: f64,
    pub evaluations: usize,
}

/// Ellipse initialisation followed by coordinate descent over the two side
/// lengths with center and angle held fixed. Only strict improvements are
/// accepted; stops after a full pass without one or when the budget is spent.
pub fn fit_rotated_box(mask: &Mask, config: &DescentConfig) -> Result<FittedBox> {
    if !(config.alpha >= 0.0) {
        return Err(Error::InvalidParameter("alpha must be ≥ 0".into()));
    }
    let initial = fit_ellipse(mask)?;
    let index = MaskIndex::new(mask);
    let base = initial.rbox;
    let mut sides = [base.major, base.minor];
    let make = |s: [f64; 2]| RotatedBox {
        major: s[0],
        minor: s[1],
        ..base
    };
    let mut evaluations = 1;
    let initial_score = index.stats(&base, config.alpha).score();
    let mut best = initial_score;
    let steps: &[f64] = if config.shrink_only { &[SHRINK] } else { &[SHRINK, GROW] };
    'outer: loop {
        let mut improved = false;
        for axis in 0..2 {
            for &f in steps {
                if evaluations >= config.budget {
                    break 'outer;
                }
                let mut cand = sides;
                cand[axis] *= f;
                evaluations += 1;
                let s = index.stats(&make(cand), config.alpha).score();
                if s > best {
                    best = s;
                    sides = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let b = make(sides);
    Ok(FittedBox {
        rbox: RotatedBox::new(b.center, b.major, b.minor, b.angle),
        initial,
        initial_score,
        score: best,
        evaluations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlternativeBox {
    /// Minimum-area enclosing rotated rectangle.
    MinArea,
    /// Tight axis-aligned bounds.
    MinMax,
}

pub fn alternative_boxes(mask: &Mask, kind: AlternativeBox) -> Result<RotatedBox> {
    if mask.is_empty() {
        return Err(Error::Degenerate("empty mask".into()));
    }
    Ok(match kind {
        AlternativeBox::MinMax => {
            let (x0, y0, x1, y1) = mask.extents().expect("non-empty");
            RotatedBox::axis_aligned(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
        }
        AlternativeBox::MinArea => min_area_box(&mask.foreground_points()),
    })
}

/// Minimum-area enclosing rectangle: one side is collinear with an edge of
/// the convex hull, so every hull edge direction is tried.
pub fn min_area_box(points: &[Point]) -> RotatedBox {
    let hull = convex_hull(points);
    match hull.len() {
        0 => return RotatedBox::new(Point::default(), 0.0, 0.0, 0.0),
        1 => return RotatedBox::new(hull[0], 0.0, 0.0, 0.0),
        _ => {}
    }
    let mut best: Option<(f64, RotatedBox)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()].sub(hull[i]);
        let len = e.norm();
        if len < 1e-12 {
            continue;
        }
        let u = Point::new(e.x / len, e.y / len);
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let (pu, pv) = (p.dot(u), p.dot(v));
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().map_or(true, |(a, _)| area < *a) {
            let (cu, cv) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
            let center = Point::new(cu * u.x + cv * v.x, cu * u.y + cv * v.y);
            let angle = u.y.atan2(u.x);
            best = Some((area, RotatedBox::new(center, umax - umin, vmax - vmin, angle)));
        }
    }
    best.map(|(_, b)| b).expect("hull has an edge")
}

/// How the tracker turns a mask into a box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoxFitMethod {
    /// Ellipse initialisation + modified-overlap coordinate descent.
    #[default]
    Optimized,
    MinArea,
    MinMax,
}

pub fn fit_box(mask: &Mask, method: BoxFitMethod, alpha: f64) -> Result<RotatedBox> {
    match method {
        BoxFitMethod::Optimized => Ok(fit_rotated_box(
            mask,
            &DescentConfig {
                alpha,
                ..Default::default()
            },
        )?
        .rbox),
        BoxFitMethod::MinArea => alternative_boxes(mask, AlternativeBox::MinArea),
        BoxFitMethod::MinMax => alternative_boxes(mask, AlternativeBox::MinMax),
    }
}
