use std::ffi::{CStr, CString};
use std::ptr;

use segtrack::features::{Backbone, HandCrafted};
use segtrack::features::Geometry;
use segtrack::network::Network;
use segtrack::synth::{SynthConfig, SyntheticSequence};
use segtrack_ffi::*;

fn rgb_bytes(seq: &SyntheticSequence, t: usize) -> (Vec<u8>, Vec<u8>) {
    let (img, mask) = seq.frame(t);
    let (w, h) = (mask.width(), mask.height());
    let mut rgb = vec![0u8; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rgb[3 * (y * w + x) + c] = (img.at3(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let m = mask.data().iter().map(|&v| v as u8).collect();
    (rgb, m)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(segtrack_last_error()) }.to_string_lossy().into_owned()
}

fn weights_file(dir: &std::path::Path) -> CString {
    let geometry = Geometry { crop_size: 64, trunk_channels: 4 };
    let net = Network::new(geometry, HandCrafted.channels(), 3).unwrap();
    let p = dir.join("w.bin");
    net.save(&p).unwrap();
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn tracks_through_the_c_interface() {
    let dir = tempfile::tempdir().unwrap();
    let path = weights_file(dir.path());
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { segtrack_weights_load(path.as_ptr(), &mut w) }, SegtrackStatus::Ok);
    let mut tr = ptr::null_mut();
    let variant = CString::new("no-l").unwrap();
    assert_eq!(unsafe { segtrack_tracker_new(w, variant.as_ptr(), &mut tr) }, SegtrackStatus::Ok);

    let cfg = SynthConfig { width: 96, height: 80, length: 3, ..SynthConfig::default() };
    let seq = SyntheticSequence::new(11, cfg);
    let (rgb, mask) = rgb_bytes(&seq, 0);
    let (w_, h_) = (96usize, 80usize);
    let mut res = SegtrackResult::default();
    let mut out_mask = vec![7u8; w_ * h_];

    assert_eq!(
        unsafe { segtrack_tracker_track(tr, rgb.as_ptr(), w_, h_, 3 * w_, &mut res, ptr::null_mut()) },
        SegtrackStatus::Uninitialized
    );
    assert!(!last_error().is_empty());

    let st = unsafe { segtrack_tracker_init_mask(tr, rgb.as_ptr(), w_, h_, 3 * w_, mask.as_ptr(), &mut res, out_mask.as_mut_ptr()) };
    assert_eq!(st, SegtrackStatus::Ok, "{}", last_error());
    assert!(out_mask.iter().all(|&v| v == 0 || v == 255));
    assert_eq!(res.mask_pixels, mask.iter().filter(|&&v| v != 0).count());

    for t in 1..3 {
        let (rgb, _) = rgb_bytes(&seq, t);
        let st = unsafe { segtrack_tracker_track(tr, rgb.as_ptr(), w_, h_, 3 * w_, &mut res, out_mask.as_mut_ptr()) };
        assert_eq!(st, SegtrackStatus::Ok, "{}", last_error());
        assert!(res.polygon.iter().all(|v| v.is_finite()));
        assert!(res.polygon.chunks(2).all(|p| (0.0..=w_ as f64).contains(&p[0]) && (0.0..=h_ as f64).contains(&p[1])));
    }
    assert_eq!(
        unsafe { segtrack_tracker_track(tr, rgb.as_ptr(), w_ - 1, h_, 3 * w_, &mut res, ptr::null_mut()) },
        SegtrackStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { segtrack_tracker_init_box(tr, rgb.as_ptr(), w_, h_, 3 * w_, 10.0, 10.0, 0.0, 5.0, &mut res, ptr::null_mut()) },
        SegtrackStatus::Degenerate
    );
    unsafe {
        segtrack_tracker_free(tr);
        segtrack_weights_free(w);
    }
}

#[test]
fn reports_errors_with_codes() {
    let mut w = ptr::null_mut();
    let missing = CString::new("/nonexistent/weights.bin").unwrap();
    assert_eq!(unsafe { segtrack_weights_load(missing.as_ptr(), &mut w) }, SegtrackStatus::MissingFile);
    assert!(last_error().contains("nonexistent"));
    assert!(w.is_null());
    assert_eq!(unsafe { segtrack_weights_load(ptr::null(), &mut w) }, SegtrackStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { segtrack_weights_load(junk.as_ptr(), &mut w) }, SegtrackStatus::Checkpoint);

    let path = weights_file(dir.path());
    assert_eq!(unsafe { segtrack_weights_load(path.as_ptr(), &mut w) }, SegtrackStatus::Ok);
    assert!(last_error().is_empty());
    let mut tr = ptr::null_mut();
    let bad = CString::new("no-such-variant").unwrap();
    assert_eq!(unsafe { segtrack_tracker_new(w, bad.as_ptr(), &mut tr) }, SegtrackStatus::InvalidArgument);
    assert_eq!(unsafe { segtrack_tracker_new(ptr::null(), ptr::null(), &mut tr) }, SegtrackStatus::NullPointer);
    unsafe {
        segtrack_tracker_free(ptr::null_mut());
        segtrack_weights_free(w);
    }
    let v = unsafe { CStr::from_ptr(segtrack_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/segtrack.h")).unwrap();
    for name in [
        "segtrack_weights_load",
        "segtrack_weights_free",
        "segtrack_tracker_new",
        "segtrack_tracker_free",
        "segtrack_tracker_init_box",
        "segtrack_tracker_init_mask",
        "segtrack_tracker_track",
        "segtrack_last_error",
        "segtrack_version",
        "typedef struct SegtrackTracker SegtrackTracker",
        "SEGTRACK_STATUS_MISSING_FILE = 3",
        "double polygon[8]",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"segtrack.h\"\n\
         int main(void) {\n\
             SegtrackWeights *w = 0;\n\
             SegtrackResult r;\n\
             SegtrackStatus s = segtrack_weights_load(\"x\", &w);\n\
             (void)r;\n\
             return s == SEGTRACK_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = match std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler `{cc}`; skipping");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
