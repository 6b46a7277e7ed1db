//! C ABI over the segtrack tracker.
//!
//! Handles are opaque and owned by the caller: every `*_new`/`*_load` has a
//! matching `*_free`. Functions return a [`SegtrackStatus`]; on failure the
//! message is available from [`segtrack_last_error`] on the same thread.
//! Frames are 8-bit interleaved RGB, `stride` bytes per row.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use segtrack::boxfit::Mask;
use segtrack::geometry::RotatedBox;
use segtrack::network::Network;
use segtrack::nn::Tensor;
use segtrack::tracker::{Ablation, InitRegion, TrackOutput, Tracker, TrackerConfig};
use segtrack::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegtrackStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingFile = 3,
    Checkpoint = 4,
    Uninitialized = 5,
    Degenerate = 6,
    Internal = 7,
    Panic = 8,
}

/// Per-frame tracking result.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SegtrackResult {
    /// Box corners `x0, y0, ..., x3, y3` in frame pixels, clamped to the frame.
    pub polygon: [f64; 8],
    /// Nonzero when the target was not found; the polygon is then the last
    /// known box.
    pub lost: i32,
    /// Foreground pixel count of the mask.
    pub mask_pixels: usize,
}

/// Trained weights shared by any number of trackers.
pub struct SegtrackWeights {
    net: Arc<Network>,
}

pub struct SegtrackTracker {
    tracker: Tracker,
    width: usize,
    height: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SegtrackStatus {
    match e {
        Error::MissingFile(_) => SegtrackStatus::MissingFile,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => SegtrackStatus::MissingFile,
        Error::Checkpoint(_) => SegtrackStatus::Checkpoint,
        Error::Uninitialized => SegtrackStatus::Uninitialized,
        Error::Degenerate(_) => SegtrackStatus::Degenerate,
        Error::Shape(_) | Error::InvalidParameter(_) | Error::Config(_) => SegtrackStatus::InvalidArgument,
        _ => SegtrackStatus::Internal,
    }
}

struct Fail(SegtrackStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SegtrackStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SegtrackStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SegtrackStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SegtrackStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SegtrackStatus::Panic
        }
    }
}

/// # Safety
/// `rgb` must point to `stride * height` readable bytes.
unsafe fn frame_tensor(rgb: *const u8, width: usize, height: usize, stride: usize) -> Result<Tensor, Fail> {
    if rgb.is_null() {
        return Err(null("frame"));
    }
    if width == 0 || height == 0 || stride < 3 * width {
        return Err(invalid(format!("bad frame geometry {width}x{height}, stride {stride}")));
    }
    let bytes = std::slice::from_raw_parts(rgb, stride * height);
    let plane = width * height;
    let mut t = Tensor::zeros(&[3, height, width]);
    let d = t.data_mut();
    for y in 0..height {
        let row = &bytes[y * stride..y * stride + 3 * width];
        for x in 0..width {
            for c in 0..3 {
                d[c * plane + y * width + x] = row[3 * x + c] as f64 / 255.0;
            }
        }
    }
    Ok(t)
}

fn write_result(out: &TrackOutput, result: *mut SegtrackResult, mask_out: *mut u8) {
    if !result.is_null() {
        let mut r = SegtrackResult {
            lost: out.lost as i32,
            mask_pixels: out.mask.count(),
            ..Default::default()
        };
        for (i, p) in out.polygon.iter().enumerate() {
            r.polygon[2 * i] = p.x;
            r.polygon[2 * i + 1] = p.y;
        }
        // SAFETY: the caller passes a valid result pointer or null.
        unsafe { *result = r };
    }
    if !mask_out.is_null() {
        // SAFETY: a non-null mask buffer holds width * height bytes.
        let m = unsafe { std::slice::from_raw_parts_mut(mask_out, out.mask.data().len()) };
        for (dst, &v) in m.iter_mut().zip(out.mask.data()) {
            *dst = if v { 255 } else { 0 };
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn segtrack_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn segtrack_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn segtrack_weights_load(path: *const c_char, out: *mut *mut SegtrackWeights) -> SegtrackStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = PathBuf::from(CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?);
        if !p.is_file() {
            return Err(Error::MissingFile(p).into());
        }
        let net = Network::load(&p)?;
        *out = Box::into_raw(Box::new(SegtrackWeights { net: Arc::new(net) }));
        Ok(())
    })
}

/// # Safety
/// `weights` must come from [`segtrack_weights_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn segtrack_weights_free(weights: *mut SegtrackWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

/// Create a tracker. `ablation` names a variant (`full`, `no-l`, `min-max`,
/// ...) or is null for the full tracker.
///
/// # Safety
/// `weights` must be a live handle, `ablation` null or NUL-terminated and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn segtrack_tracker_new(weights: *const SegtrackWeights, ablation: *const c_char, out: *mut *mut SegtrackTracker) -> SegtrackStatus {
    guard(|| {
        let w = weights.as_ref().ok_or_else(|| null("weights"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut config = TrackerConfig::default();
        if !ablation.is_null() {
            let name = CStr::from_ptr(ablation).to_str().map_err(|_| invalid("ablation is not UTF-8"))?;
            config = Ablation::parse(name)?.apply(config);
        }
        *out = Box::into_raw(Box::new(SegtrackTracker {
            tracker: Tracker::new(w.net.clone(), config),
            width: 0,
            height: 0,
        }));
        Ok(())
    })
}

/// # Safety
/// `tracker` must come from [`segtrack_tracker_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn segtrack_tracker_free(tracker: *mut SegtrackTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Start tracking from an axis-aligned box `(x, y, w, h)`.
///
/// # Safety
/// `tracker` must be live, `rgb` must hold `stride * height` bytes, `result`
/// may be null, `mask_out` null or `width * height` bytes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn segtrack_tracker_init_box(
    tracker: *mut SegtrackTracker,
    rgb: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    result: *mut SegtrackResult,
    mask_out: *mut u8,
) -> SegtrackStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        let frame = frame_tensor(rgb, width, height, stride)?;
        let b = RotatedBox::axis_aligned(x, y, x + w, y + h);
        let out = t.tracker.initialize(&frame, &InitRegion::Box(b))?;
        (t.width, t.height) = (width, height);
        write_result(&out, result, mask_out);
        Ok(())
    })
}

/// Start tracking from a mask of `width * height` bytes, nonzero foreground.
///
/// # Safety
/// As [`segtrack_tracker_init_box`]; `mask` must hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn segtrack_tracker_init_mask(
    tracker: *mut SegtrackTracker,
    rgb: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    mask: *const u8,
    result: *mut SegtrackResult,
    mask_out: *mut u8,
) -> SegtrackStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        let frame = frame_tensor(rgb, width, height, stride)?;
        if mask.is_null() {
            return Err(null("mask"));
        }
        let m = std::slice::from_raw_parts(mask, width * height);
        let m = Mask::from_vec(width, height, m.iter().map(|&v| v != 0).collect());
        let out = t.tracker.initialize(&frame, &InitRegion::Mask(m))?;
        (t.width, t.height) = (width, height);
        write_result(&out, result, mask_out);
        Ok(())
    })
}

/// Track the target into the next frame, which must match the
/// initialization frame size.
///
/// # Safety
/// As [`segtrack_tracker_init_box`].
#[no_mangle]
pub unsafe extern "C" fn segtrack_tracker_track(
    tracker: *mut SegtrackTracker,
    rgb: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    result: *mut SegtrackResult,
    mask_out: *mut u8,
) -> SegtrackStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        if t.tracker.state().is_none() {
            return Err(Error::Uninitialized.into());
        }
        if (width, height) != (t.width, t.height) {
            return Err(invalid(format!("frame is {width}x{height}, tracker was started on {}x{}", t.width, t.height)));
        }
        let frame = frame_tensor(rgb, width, height, stride)?;
        let out = t.tracker.track(&frame)?;
        write_result(&out, result, mask_out);
        Ok(())
    })
}
