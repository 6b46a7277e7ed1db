//! Online tracking loop.
//!
//! Per frame: crop a region around the previous position, compute features,
//! locate the target with the correlation filter (L channel), match against
//! the stored feature sets (F, P channels), refine to a crop-resolution
//! segmentation, keep its largest component, fit a box and map everything
//! back to the frame.

use std::sync::Arc;

use crate::boxfit::{binarize_largest_component, fit_box, BoxFitMethod, Mask, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::features::{correlation_features, extract_search_region, Backbone, FeaturePyramid, HandCrafted, SearchRegion, MODEL_STRIDE};
use crate::gem::{apply_dcf, location_channel, train_dcf, update_dcf, CorrelationFilter, DcfConfig, GridPos};
use crate::geometry::{Point, RotatedBox};
use crate::gim::{build_gim_model, mask_to_grid, posterior_channel, similarity_channels, ChannelStack, GimConfig, GimModel};
use crate::network::Network;
use crate::nn::Tensor;

/// Weight of the newly measured size in the running size estimate.
pub const SIZE_SMOOTHING: f64 = 0.4;
/// Smallest tracked side length in frame pixels.
const MIN_SIDE: f64 = 2.0;

/// Channels replaced by zeros before fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelToggles {
    pub drop_l: bool,
    pub drop_f: bool,
    pub drop_p: bool,
}

/// Where the correlation filter is re-centered after each frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DcfUpdateSource {
    /// Center of the box fitted to the segmentation.
    #[default]
    Segmentation,
    /// The filter's own response maximum.
    FilterPeak,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    pub gim: GimConfig,
    pub dcf: DcfConfig,
    pub alpha: f64,
    pub box_method: BoxFitMethod,
    pub size_smoothing: f64,
    pub channels: ChannelToggles,
    pub dcf_update: DcfUpdateSource,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gim: GimConfig::default(),
            dcf: DcfConfig::default(),
            alpha: DEFAULT_ALPHA,
            box_method: BoxFitMethod::Optimized,
            size_smoothing: SIZE_SMOOTHING,
            channels: ChannelToggles::default(),
            dcf_update: DcfUpdateSource::Segmentation,
        }
    }
}

/// Named tracker variants for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    NoF,
    NoP,
    NoFP,
    NoL,
    SelfUpdate,
    MinArea,
    MinMax,
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::Full,
        Ablation::NoF,
        Ablation::NoP,
        Ablation::NoFP,
        Ablation::NoL,
        Ablation::SelfUpdate,
        Ablation::MinArea,
        Ablation::MinMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoF => "no-f",
            Ablation::NoP => "no-p",
            Ablation::NoFP => "no-fp",
            Ablation::NoL => "no-l",
            Ablation::SelfUpdate => "self-update",
            Ablation::MinArea => "min-area",
            Ablation::MinMax => "min-max",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`; expected one of {}", Self::ALL.map(|a| a.name()).join(", "))))
    }

    pub fn apply(self, mut c: TrackerConfig) -> TrackerConfig {
        match self {
            Ablation::Full => {}
            Ablation::NoF => c.channels.drop_f = true,
            Ablation::NoP => c.channels.drop_p = true,
            Ablation::NoFP => {
                c.channels.drop_f = true;
                c.channels.drop_p = true;
            }
            Ablation::NoL => c.channels.drop_l = true,
            Ablation::SelfUpdate => c.dcf_update = DcfUpdateSource::FilterPeak,
            Ablation::MinArea => c.box_method = BoxFitMethod::MinArea,
            Ablation::MinMax => c.box_method = BoxFitMethod::MinMax,
        }
        c
    }
}

/// Ground truth used to start tracking.
#[derive(Clone, Debug)]
pub enum InitRegion {
    Mask(Mask),
    Box(RotatedBox),
}

/// Model-grid coordinates of a crop pixel.
pub fn grid_from_crop(p: Point) -> GridPos {
    let off = (MODEL_STRIDE as f64 - 1.0) / 2.0;
    GridPos::new((p.y - off) / MODEL_STRIDE as f64, (p.x - off) / MODEL_STRIDE as f64)
}

pub fn crop_from_grid(g: GridPos) -> Point {
    let off = (MODEL_STRIDE as f64 - 1.0) / 2.0;
    Point::new(g.col * MODEL_STRIDE as f64 + off, g.row * MODEL_STRIDE as f64 + off)
}

fn clamp_to_grid(g: GridPos, n: usize) -> GridPos {
    let hi = (n - 1) as f64;
    GridPos::new(g.row.clamp(0.0, hi), g.col.clamp(0.0, hi))
}

/// Features of one search region.
pub struct RegionFeatures {
    pub region: SearchRegion,
    pub pyramid: FeaturePyramid,
    /// GIM matching features, `[64, g, g]`.
    pub reduced: Tensor,
    /// Correlation-filter features, `[64, g, g]`.
    pub correlation: Tensor,
}

pub fn region_features(net: &Network, backbone: &dyn Backbone, frame: &Tensor, center: Point, size: (f64, f64), frame_index: usize) -> Result<RegionFeatures> {
    let region = extract_search_region(frame, center, size, net.geometry.crop_size)?;
    let pyramid = backbone.pyramid(&region, frame_index)?;
    pyramid.validate(net.geometry.crop_size)?;
    let reduced = net.adjust.forward(pyramid.model_level())?;
    let correlation = correlation_features(pyramid.model_level())?;
    Ok(RegionFeatures {
        region,
        pyramid,
        reduced,
        correlation,
    })
}

/// L, F, B, P for a region with ablated channels zeroed.
pub fn channel_stack(reduced: &Tensor, gim: &GimModel, location: GridPos, toggles: ChannelToggles) -> Result<ChannelStack> {
    let (_, h, w) = reduced.dims3()?;
    let (f, b) = similarity_channels(reduced, gim)?;
    let p = posterior_channel(&f, &b)?;
    let mut s = ChannelStack {
        l: location_channel(location, h, w),
        f,
        b,
        p,
    };
    if toggles.drop_l {
        s.l.fill(0.0);
    }
    if toggles.drop_f {
        s.f.fill(0.0);
    }
    if toggles.drop_p {
        s.p.fill(0.0);
    }
    Ok(s)
}

/// Per-sequence tracker state.
#[derive(Clone, Debug)]
pub struct TrackerState {
    pub gim: GimModel,
    pub dcf: CorrelationFilter,
    pub center: Point,
    /// `(major, minor)` side lengths in frame pixels.
    pub size: (f64, f64),
    pub lost: bool,
    pub last_box: RotatedBox,
}

impl TrackerState {
    /// Re-center the filter on the current frame. `segmentation` is where the
    /// fitted box puts the target, `peak` where the filter response does.
    pub fn update_filter(&mut self, correlation: &Tensor, segmentation: GridPos, peak: GridPos, source: DcfUpdateSource, eta: f64) -> Result<()> {
        let n = self.dcf.grid().0;
        let at = match source {
            DcfUpdateSource::Segmentation => segmentation,
            DcfUpdateSource::FilterPeak => peak,
        };
        update_dcf(&mut self.dcf, correlation, clamp_to_grid(at, n), eta)
    }
}

/// Result of one tracked frame, in frame coordinates.
#[derive(Clone, Debug)]
pub struct TrackOutput {
    pub mask: Mask,
    pub rbox: RotatedBox,
    /// Box corners clamped to the frame.
    pub polygon: [Point; 4],
    pub lost: bool,
}

pub struct Tracker {
    net: Arc<Network>,
    backbone: Arc<dyn Backbone>,
    pub config: TrackerConfig,
    state: Option<TrackerState>,
    frame_index: usize,
}

impl Tracker {
    pub fn new(net: Arc<Network>, config: TrackerConfig) -> Self {
        Self::with_backbone(net, Arc::new(HandCrafted), config)
    }

    pub fn with_backbone(net: Arc<Network>, backbone: Arc<dyn Backbone>, config: TrackerConfig) -> Self {
        Tracker {
            net,
            backbone,
            config,
            state: None,
            frame_index: 0,
        }
    }

    pub fn state(&self) -> Option<&TrackerState> {
        self.state.as_ref()
    }

    /// Start on `frame` (`[3, H, W]`, values in `[0, 1]`). With a box, one
    /// segmentation pass on the first frame replaces the box interior by a
    /// proxy mask before the feature sets are built.
    pub fn initialize(&mut self, frame: &Tensor, region: &InitRegion) -> Result<TrackOutput> {
        self.initialize_at(frame, region, 0)
    }

    /// Like [`Tracker::initialize`], with the index of `frame` in its sequence
    /// (used by backbones that read stored features).
    pub fn initialize_at(&mut self, frame: &Tensor, init: &InitRegion, frame_index: usize) -> Result<TrackOutput> {
        let (_, fh, fw) = frame.dims3()?;
        let (mask, rbox, center, size) = match init {
            InitRegion::Mask(m) => {
                if (m.width(), m.height()) != (fw, fh) {
                    return Err(Error::Shape(format!("mask {}x{} for a {fw}x{fh} frame", m.width(), m.height())));
                }
                let (x0, y0, x1, y1) = m.extents().ok_or_else(|| Error::Degenerate("empty ground-truth mask".into()))?;
                let b = RotatedBox::axis_aligned(x0 as f64, y0 as f64, x1 as f64, y1 as f64);
                let (center, size) = target_geometry(m, self.config.alpha)?;
                (m.clone(), b, center, size)
            }
            InitRegion::Box(b) => {
                if !(b.major > 0.0 && b.minor > 0.0) || !b.center.x.is_finite() || !b.center.y.is_finite() {
                    return Err(Error::Degenerate("zero-area initialization box".into()));
                }
                let m = Mask::from_box(b, fw, fh);
                if m.is_empty() {
                    return Err(Error::Degenerate("initialization box covers no pixel of the frame".into()));
                }
                (m, *b, b.center, (b.major, b.minor))
            }
        };
        let size = normalize_size(size);
        let feats = region_features(&self.net, self.backbone.as_ref(), frame, center, size, frame_index)?;
        let g = self.net.geometry.grid();
        let crop_mask = feats.region.crop_mask(&mask);
        let mut gim = build_gim_model(&feats.reduced, &grid_mask_or_center(&crop_mask, g)?, &self.config.gim)?;
        let target_cell = grid_from_crop(feats.region.frame_to_crop(center));
        if let InitRegion::Box(_) = init {
            let stack = channel_stack(&feats.reduced, &gim, target_cell, self.config.channels)?;
            let prob = self.net.refine.forward(&stack.fusion_input()?, &feats.pyramid)?;
            if let Ok(proxy) = binarize_largest_component(&prob) {
                if let Ok(rebuilt) = build_gim_model(&feats.reduced, &grid_mask_or_center(&proxy, g)?, &self.config.gim) {
                    gim = rebuilt;
                }
            }
        }
        let dcf = train_dcf(&feats.correlation, clamp_to_grid(target_cell, g), g as f64 / 4.0, &self.config.dcf)?;
        self.state = Some(TrackerState {
            gim,
            dcf,
            center,
            size,
            lost: false,
            last_box: rbox,
        });
        self.frame_index = frame_index;
        Ok(TrackOutput {
            polygon: clamp_polygon(&rbox, fw, fh),
            rbox,
            mask,
            lost: false,
        })
    }

    pub fn track(&mut self, frame: &Tensor) -> Result<TrackOutput> {
        let idx = self.frame_index + 1;
        self.track_at(frame, idx)
    }

    pub fn track_at(&mut self, frame: &Tensor, frame_index: usize) -> Result<TrackOutput> {
        let state = self.state.as_mut().ok_or(Error::Uninitialized)?;
        self.frame_index = frame_index;
        let (_, fh, fw) = frame.dims3()?;
        let feats = region_features(&self.net, self.backbone.as_ref(), frame, state.center, state.size, frame_index)?;
        let response = apply_dcf(&state.dcf, &feats.correlation)?;
        let peak = response.subcell_peak();
        let stack = channel_stack(&feats.reduced, &state.gim, peak, self.config.channels)?;
        let prob = self.net.refine.forward(&stack.fusion_input()?, &feats.pyramid)?;
        let crop_mask = match binarize_largest_component(&prob) {
            Ok(m) => m,
            Err(Error::Degenerate(_)) => {
                state.lost = true;
                let b = state.last_box;
                return Ok(TrackOutput {
                    mask: Mask::new(fw, fh),
                    polygon: clamp_polygon(&b, fw, fh),
                    rbox: b,
                    lost: true,
                });
            }
            Err(e) => return Err(e),
        };
        let crop_box = fit_box(&crop_mask, self.config.box_method, self.config.alpha)?;
        let region = &feats.region;
        let rbox = RotatedBox::new(
            region.crop_to_frame(crop_box.center),
            crop_box.major * region.scale,
            crop_box.minor * region.scale,
            crop_box.angle,
        );
        let mask = region.uncrop_mask(&crop_mask);

        let segmentation = grid_from_crop(crop_box.center);
        let eta = state.dcf.config.update_rate;
        state.update_filter(&feats.correlation, segmentation, peak, self.config.dcf_update, eta)?;

        let k = self.config.size_smoothing;
        let measured = normalize_size((rbox.major, rbox.minor));
        state.size = normalize_size((
            (1.0 - k) * state.size.0 + k * measured.0,
            (1.0 - k) * state.size.1 + k * measured.1,
        ));
        state.center = Point::new(rbox.center.x.clamp(0.0, (fw - 1) as f64), rbox.center.y.clamp(0.0, (fh - 1) as f64));
        state.lost = false;
        state.last_box = rbox;
        Ok(TrackOutput {
            mask,
            polygon: clamp_polygon(&rbox, fw, fh),
            rbox,
            lost: false,
        })
    }
}

/// Grid mask by majority vote; when the target is too small to win any cell,
/// the cell under the mask centroid stands in.
pub(crate) fn grid_mask_or_center(crop_mask: &Mask, grid: usize) -> Result<Mask> {
    let mut g = mask_to_grid(crop_mask, MODEL_STRIDE)?;
    if g.is_empty() {
        let c = crop_mask.centroid().ok_or_else(|| Error::Degenerate("target lies outside the search region".into()))?;
        let cell = clamp_to_grid(grid_from_crop(c), grid);
        g.set(cell.col.round() as usize, cell.row.round() as usize, true);
    }
    Ok(g)
}

/// Center and `(major, minor)` size of a target mask as the tracker measures
/// it: the sides of the box fitted to the mask.
pub fn target_geometry(mask: &Mask, alpha: f64) -> Result<(Point, (f64, f64))> {
    let b = fit_box(mask, BoxFitMethod::Optimized, alpha)?;
    Ok((b.center, normalize_size((b.major, b.minor))))
}

pub(crate) fn normalize_size((a, b): (f64, f64)) -> (f64, f64) {
    let (a, b) = (a.max(MIN_SIDE), b.max(MIN_SIDE));
    if a >= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Box corners with each coordinate clamped into the frame.
pub fn clamp_polygon(b: &RotatedBox, w: usize, h: usize) -> [Point; 4] {
    b.corners()
        .map(|p| Point::new(p.x.clamp(0.0, (w - 1) as f64), p.y.clamp(0.0, (h - 1) as f64)))
}
