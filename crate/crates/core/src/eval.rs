//! Benchmark measures: region overlap, the reset protocol, average overlap
//! and success rates, and the video-segmentation J and F measures.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::boxfit::{min_area_box, Mask};
use crate::error::{Error, Result};
use crate::geometry::{clip_convex, polygon_area, Point, RotatedBox};
use crate::nn::Tensor;
use crate::tracker::{InitRegion, Tracker};

/// Environment variable holding the evaluation worker count.
pub const WORKERS_ENV: &str = "SEGTRACK_WORKERS";
pub const DEFAULT_SKIP: usize = 5;
pub const DEFAULT_BURN_IN: usize = 10;
/// Center-error threshold of the precision score, in pixels.
pub const PRECISION_THRESHOLD: f64 = 20.0;
/// Boundary tolerance of F as a fraction of the image diagonal.
pub const BOUNDARY_TOLERANCE: f64 = 0.008;

/// A target region in frame coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Empty,
    /// Convex polygon, e.g. the four corners of a box.
    Polygon(Vec<Point>),
    Mask(Mask),
}

impl From<RotatedBox> for Region {
    fn from(b: RotatedBox) -> Self {
        Region::Polygon(b.polygon())
    }
}

impl Region {
    pub fn is_empty(&self) -> bool {
        match self {
            Region::Empty => true,
            Region::Polygon(p) => polygon_area(p) <= 0.0,
            Region::Mask(m) => m.is_empty(),
        }
    }

    pub fn center(&self) -> Option<Point> {
        match self {
            Region::Empty => None,
            Region::Polygon(p) => polygon_centroid(p),
            Region::Mask(m) => m.centroid(),
        }
    }

    /// Box used to start a tracker from this region.
    pub fn to_init(&self) -> Result<InitRegion> {
        match self {
            Region::Mask(m) if !m.is_empty() => Ok(InitRegion::Mask(m.clone())),
            Region::Polygon(p) if !self.is_empty() => Ok(InitRegion::Box(min_area_box(p))),
            _ => Err(Error::Degenerate("cannot initialize from an empty region".into())),
        }
    }
}

fn polygon_centroid(p: &[Point]) -> Option<Point> {
    let n = p.len();
    let mut a = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p0, p1) = (p[i], p[(i + 1) % n]);
        let cr = p0.cross(p1);
        a += cr;
        cx += (p0.x + p1.x) * cr;
        cy += (p0.y + p1.y) * cr;
    }
    if a.abs() < 1e-12 {
        return None;
    }
    Some(Point::new(cx / (3.0 * a), cy / (3.0 * a)))
}

/// Pixels whose centers lie inside a convex polygon.
pub fn rasterize_polygon(poly: &[Point], width: usize, height: usize) -> Mask {
    if poly.len() < 3 {
        return Mask::new(width, height);
    }
    let orient = if crate::geometry::signed_area(poly) >= 0.0 { 1.0 } else { -1.0 };
    let n = poly.len();
    Mask::from_fn(width, height, |x, y| {
        let p = Point::new(x as f64, y as f64);
        (0..n).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            orient * b.sub(a).cross(p.sub(a)) >= -1e-9
        })
    })
}

fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    let w = a.width().max(b.width()) as isize;
    let h = a.height().max(b.height()) as isize;
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (p, q) = (a.get_signed(x, y), b.get_signed(x, y));
            inter += (p && q) as usize;
            union += (p || q) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union of two regions. Polygons are intersected
/// analytically, masks by pixel counts, and a polygon is rasterized when
/// compared with a mask. Two empty regions overlap by 0.
pub fn region_overlap(a: &Region, b: &Region) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    match (a, b) {
        (Region::Polygon(p), Region::Polygon(q)) => {
            let inter = polygon_area(&clip_convex(p, q));
            let union = polygon_area(p) + polygon_area(q) - inter;
            if union <= 0.0 {
                0.0
            } else {
                (inter / union).clamp(0.0, 1.0)
            }
        }
        (Region::Mask(m), Region::Mask(n)) => mask_iou(m, n),
        (Region::Polygon(p), Region::Mask(m)) | (Region::Mask(m), Region::Polygon(p)) => {
            mask_iou(&rasterize_polygon(p, m.width(), m.height()), m)
        }
        _ => 0.0,
    }
}

/// Distance between region centers; `None` when either region is empty.
pub fn center_error(a: &Region, b: &Region) -> Option<f64> {
    Some(a.center()?.sub(b.center()?).norm())
}

/// Minimum-area rectangle around a mask, the box-level ground truth of a
/// segmented target.
pub fn reference_box(mask: &Mask) -> Option<RotatedBox> {
    let pts: Vec<Point> = mask.foreground_points();
    (!pts.is_empty()).then(|| min_area_box(&pts))
}

/// One frame of a protocol run.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameRecord {
    /// The tracker was (re)started from ground truth on this frame.
    Init,
    Tracked { region: Region, overlap: f64, center_error: Option<f64> },
    /// Zero overlap under the reset protocol.
    Failure { region: Region },
    /// Waiting for reinitialization after a failure.
    Skipped,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackRun {
    pub frames: Vec<FrameRecord>,
}

/// Initialization and failure frames of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Init(usize),
    Failure(usize),
}

impl TrackRun {
    pub fn events(&self) -> Vec<Event> {
        self.frames
            .iter()
            .enumerate()
            .filter_map(|(t, f)| match f {
                FrameRecord::Init => Some(Event::Init(t)),
                FrameRecord::Failure { .. } => Some(Event::Failure(t)),
                _ => None,
            })
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.frames.iter().filter(|f| matches!(f, FrameRecord::Failure { .. })).count()
    }

    /// Per-frame overlap; `None` on init and skipped frames.
    pub fn overlaps(&self) -> Vec<Option<f64>> {
        self.frames
            .iter()
            .map(|f| match f {
                FrameRecord::Tracked { overlap, .. } => Some(*overlap),
                FrameRecord::Failure { .. } => Some(0.0),
                _ => None,
            })
            .collect()
    }

    /// Mean overlap over tracked frames more than `burn_in` frames after the
    /// latest initialization. Failure frames do not count. `None` when no
    /// frame qualifies.
    pub fn accuracy(&self, burn_in: usize) -> Option<f64> {
        let mut last_init = 0;
        let (mut sum, mut n) = (0.0, 0usize);
        for (t, f) in self.frames.iter().enumerate() {
            match f {
                FrameRecord::Init => last_init = t,
                FrameRecord::Tracked { overlap, .. } if t - last_init > burn_in => {
                    sum += overlap;
                    n += 1;
                }
                _ => {}
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Constants of the reset protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResetConfig {
    /// Frames skipped after a failure before reinitializing.
    pub skip: usize,
    /// Frames after each initialization excluded from accuracy.
    pub burn_in: usize,
}

impl Default for ResetConfig {
    fn default() -> Self {
        ResetConfig {
            skip: DEFAULT_SKIP,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResetMetrics {
    /// `None` when no frame was eligible for accuracy.
    pub accuracy: Option<f64>,
    pub failures: usize,
}

/// A tracker driven by frame index; implementations own their frames.
pub trait SequenceTracker {
    fn initialize(&mut self, frame: usize, ground_truth: &Region) -> Result<()>;
    fn track(&mut self, frame: usize) -> Result<Region>;
}

fn track_frame<T: SequenceTracker>(tracker: &mut T, t: usize, gt: &Region) -> Result<(Region, f64, Option<f64>)> {
    let region = tracker.track(t)?;
    let overlap = region_overlap(&region, gt);
    let err = center_error(&region, gt);
    Ok((region, overlap, err))
}

/// Run with reinitialization: a frame with zero overlap is a failure, the
/// tracker is restarted by `factory` `skip` frames later (on the next frame
/// with a non-empty ground truth).
pub fn run_reset_protocol<T: SequenceTracker>(factory: &mut dyn FnMut() -> Result<T>, ground_truth: &[Region], config: &ResetConfig) -> Result<(ResetMetrics, TrackRun)> {
    let n = ground_truth.len();
    let mut frames = Vec::with_capacity(n);
    let mut tracker: Option<T> = None;
    let mut next_init = 0;
    for (t, gt) in ground_truth.iter().enumerate() {
        if tracker.is_none() {
            if t < next_init || gt.is_empty() {
                frames.push(FrameRecord::Skipped);
                continue;
            }
            let mut tr = factory()?;
            tr.initialize(t, gt)?;
            tracker = Some(tr);
            frames.push(FrameRecord::Init);
            continue;
        }
        let tr = tracker.as_mut().expect("running tracker");
        let (region, overlap, center_error) = track_frame(tr, t, gt)?;
        if overlap > 0.0 || gt.is_empty() {
            frames.push(FrameRecord::Tracked {
                region,
                overlap,
                center_error,
            });
        } else {
            frames.push(FrameRecord::Failure { region });
            tracker = None;
            next_init = t + config.skip;
        }
    }
    let run = TrackRun { frames };
    let metrics = ResetMetrics {
        accuracy: run.accuracy(config.burn_in),
        failures: run.failures(),
    };
    Ok((metrics, run))
}

/// Run without reinitialization from the first frame.
pub fn run_no_reset<T: SequenceTracker>(tracker: &mut T, ground_truth: &[Region]) -> Result<TrackRun> {
    let Some(first) = ground_truth.first() else {
        return Ok(TrackRun::default());
    };
    tracker.initialize(0, first)?;
    let mut frames = vec![FrameRecord::Init];
    for (t, gt) in ground_truth.iter().enumerate().skip(1) {
        let (region, overlap, center_error) = track_frame(tracker, t, gt)?;
        frames.push(FrameRecord::Tracked {
            region,
            overlap,
            center_error,
        });
    }
    Ok(TrackRun { frames })
}

/// Score stored predictions against ground truth. `None` entries mark the
/// initialization frame; a run without markers starts at frame 0.
pub fn score_predictions(predictions: &[Option<Region>], ground_truth: &[Region]) -> Result<TrackRun> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} ground-truth frames", predictions.len(), ground_truth.len())));
    }
    let frames = predictions
        .iter()
        .zip(ground_truth)
        .map(|(p, gt)| match p {
            None => FrameRecord::Init,
            Some(region) => FrameRecord::Tracked {
                overlap: region_overlap(region, gt),
                center_error: center_error(region, gt),
                region: region.clone(),
            },
        })
        .collect();
    Ok(TrackRun { frames })
}

/// Overlap summary of a run without resets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapSummary {
    pub ao: f64,
    pub sr50: f64,
    pub sr75: f64,
    pub precision: f64,
    pub frames: usize,
}

/// Fraction of overlaps strictly above `threshold`.
pub fn success_rate(overlaps: &[f64], threshold: f64) -> f64 {
    if overlaps.is_empty() {
        return 0.0;
    }
    overlaps.iter().filter(|&&o| o > threshold).count() as f64 / overlaps.len() as f64
}

/// AO, SR at 0.5 and 0.75 and precision at 20 px over tracked frames. Frames
/// where either center is undefined count as misses for precision.
pub fn average_overlap_sr(run: &TrackRun) -> OverlapSummary {
    let mut overlaps = Vec::new();
    let mut hits = 0usize;
    for f in &run.frames {
        if let FrameRecord::Tracked { overlap, center_error, .. } = f {
            overlaps.push(*overlap);
            hits += center_error.is_some_and(|e| e <= PRECISION_THRESHOLD) as usize;
        }
    }
    let n = overlaps.len();
    if n == 0 {
        return OverlapSummary {
            ao: 0.0,
            sr50: 0.0,
            sr75: 0.0,
            precision: 0.0,
            frames: 0,
        };
    }
    OverlapSummary {
        ao: overlaps.iter().sum::<f64>() / n as f64,
        sr50: success_rate(&overlaps, 0.5),
        sr75: success_rate(&overlaps, 0.75),
        precision: hits as f64 / n as f64,
        frames: n,
    }
}

/// Region similarity of one frame; two empty masks agree perfectly.
pub fn jaccard(pred: &Mask, gt: &Mask) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        1.0
    } else {
        mask_iou(pred, gt)
    }
}

/// Foreground pixels with a 4-neighbour outside the mask or the frame.
fn boundary(mask: &Mask) -> Mask {
    let mut b = Mask::new(mask.width(), mask.height());
    for (x, y) in mask.outline() {
        b.set(x, y, true);
    }
    b
}

fn dilate(mask: &Mask, radius: usize) -> Mask {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut out = Mask::new(mask.width(), mask.height());
    for (x, y) in mask.foreground() {
        for &(dx, dy) in &offsets {
            let (u, v) = (x as isize + dx, y as isize + dy);
            if u >= 0 && v >= 0 && u < w && v < h {
                out.set(u as usize, v as usize, true);
            }
        }
    }
    out
}

/// Boundary match radius for a frame: 0.8% of its diagonal, rounded up.
pub fn boundary_radius(width: usize, height: usize) -> usize {
    (BOUNDARY_TOLERANCE * ((width * width + height * height) as f64).sqrt()).ceil() as usize
}

/// Contour F-measure of one frame with the given match radius.
pub fn boundary_f(pred: &Mask, gt: &Mask, radius: usize) -> f64 {
    let (pb, gb) = (boundary(pred), boundary(gt));
    let (np, ng) = (pb.count(), gb.count());
    match (np, ng) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let precision = pb.intersection_count(&dilate(&gb, radius)) as f64 / np as f64;
    let recall = gb.intersection_count(&dilate(&pb, radius)) as f64 / ng as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DavisMeasures {
    pub j: f64,
    pub f: f64,
    pub frames: usize,
}

/// Mean J and F over aligned mask sequences.
pub fn davis_measures(pred: &[Mask], gt: &[Mask]) -> Result<DavisMeasures> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted masks for {} ground-truth masks", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(DavisMeasures { j: 0.0, f: 0.0, frames: 0 });
    }
    let (mut j, mut f) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        if (p.width(), p.height()) != (g.width(), g.height()) {
            return Err(Error::Shape(format!("mask {}x{} vs {}x{}", p.width(), p.height(), g.width(), g.height())));
        }
        j += jaccard(p, g);
        f += boundary_f(p, g, boundary_radius(g.width(), g.height()));
    }
    let n = pred.len() as f64;
    Ok(DavisMeasures {
        j: j / n,
        f: f / n,
        frames: pred.len(),
    })
}

/// How a report column is aggregated over sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub aggregate: Aggregate,
    /// Printed without decimals.
    pub integer: bool,
}

impl Column {
    pub fn mean(name: &str) -> Self {
        Column {
            name: name.into(),
            aggregate: Aggregate::Mean,
            integer: false,
        }
    }

    pub fn count(name: &str) -> Self {
        Column {
            name: name.into(),
            aggregate: Aggregate::Sum,
            integer: true,
        }
    }
}

/// Per-sequence metrics with an aggregate row. Missing values (`NaN`) are
/// skipped when aggregating.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub columns: Vec<Column>,
    pub rows: Vec<(String, Vec<f64>)>,
    /// Header of the row-name column.
    pub label: String,
    /// Append the `all` row when printing.
    pub summary: bool,
}

impl Report {
    pub fn new(columns: Vec<Column>) -> Self {
        Report {
            columns,
            rows: Vec::new(),
            label: "sequence".into(),
            summary: true,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "report row width");
        self.rows.push((name.into(), values));
    }

    pub fn aggregate(&self) -> Vec<f64> {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let vals: Vec<f64> = self.rows.iter().map(|r| r.1[i]).filter(|v| !v.is_nan()).collect();
                match c.aggregate {
                    Aggregate::Sum => vals.iter().sum(),
                    Aggregate::Mean if vals.is_empty() => f64::NAN,
                    Aggregate::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                }
            })
            .collect()
    }

    fn cell(c: &Column, v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if c.integer {
            format!("{v:.0}")
        } else {
            format!("{v:.6}")
        }
    }

    fn all_rows(&self) -> Vec<(String, Vec<String>)> {
        let fmt = |vals: &[f64]| self.columns.iter().zip(vals).map(|(c, &v)| Self::cell(c, v)).collect();
        let mut rows: Vec<(String, Vec<String>)> = self.rows.iter().map(|(n, v)| (n.clone(), fmt(v))).collect();
        if self.summary {
            rows.push(("all".into(), fmt(&self.aggregate())));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.label.clone();
        for c in &self.columns {
            s.push(',');
            s.push_str(&c.name);
        }
        s.push('\n');
        for (name, cells) in self.all_rows() {
            s.push_str(&name);
            for c in cells {
                s.push(',');
                s.push_str(&c);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_table(&self) -> String {
        let rows = self.all_rows();
        let name_w = rows.iter().map(|r| r.0.len()).chain([self.label.len()]).max().unwrap_or(8);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| rows.iter().map(|r| r.1[i].len()).chain([c.name.len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        let _ = write!(s, "{:<name_w$}", self.label);
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(s, "  {:>w$}", c.name);
        }
        s.push('\n');
        let total: usize = name_w + widths.iter().map(|w| w + 2).sum::<usize>();
        s.push_str(&"-".repeat(total));
        s.push('\n');
        for (name, cells) in rows {
            let _ = write!(s, "{name:<name_w$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(s, "  {c:>w$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Map `f` over `items` on a pool of [`worker_count`] threads, keeping order.
pub fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Result<Vec<U>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

/// Frames of a sequence, loaded on demand.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Tensor>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for crate::synth::SyntheticSequence {
    fn len(&self) -> usize {
        crate::synth::SyntheticSequence::len(self)
    }

    fn frame(&self, index: usize) -> Result<Tensor> {
        Ok(crate::synth::SyntheticSequence::frame(self, index).0)
    }
}

/// What a [`Session`] reports per frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputKind {
    /// Corners of the fitted box, clamped to the frame.
    #[default]
    Box,
    Mask,
}

/// Adapter running a [`Tracker`] over a [`FrameSource`].
pub struct Session<'a, F: FrameSource + ?Sized> {
    pub tracker: Tracker,
    pub frames: &'a F,
    pub output: OutputKind,
}

impl<F: FrameSource + ?Sized> SequenceTracker for Session<'_, F> {
    fn initialize(&mut self, frame: usize, ground_truth: &Region) -> Result<()> {
        let img = self.frames.frame(frame)?;
        self.tracker.initialize_at(&img, &ground_truth.to_init()?, frame)?;
        Ok(())
    }

    fn track(&mut self, frame: usize) -> Result<Region> {
        let img = self.frames.frame(frame)?;
        let out = self.tracker.track_at(&img, frame)?;
        Ok(match self.output {
            OutputKind::Mask => Region::Mask(out.mask),
            OutputKind::Box if out.lost => Region::Empty,
            OutputKind::Box => Region::Polygon(out.polygon.to_vec()),
        })
    }
}
