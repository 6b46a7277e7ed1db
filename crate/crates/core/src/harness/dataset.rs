//! Sequence datasets on disk and the prediction file formats.
//!
//! A sequence directory holds its frames (`*.png`, `*.jpg`, sorted by name)
//! either directly or under `color/`, plus ground truth as
//! `groundtruth.txt` and/or `masks/*.png`. `groundtruth.txt` has one line per
//! frame with 4 (`x,y,w,h`) or 8 (polygon corners) comma-separated numbers.
//! A mask directory holding a single file annotates only the first frame.
//!
//! Box predictions are one line per frame of 8 numbers with 6 decimals. A
//! line holding only `1`, `2` or `0` marks an initialization, a failure or a
//! skipped frame of a reset-protocol run. Mask predictions are single-channel
//! PNGs, 0 for background and 255 for foreground.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::boxfit::Mask;
use crate::error::{Error, Result};
use crate::eval::{FrameSource, Region};
use crate::geometry::{Point, RotatedBox};
use crate::nn::Tensor;

pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";
pub const MASK_DIR: &str = "masks";
pub const BOX_FILE: &str = "boxes.txt";
const FRAME_DIR: &str = "color";

/// Which annotations a sequence carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundTruthFormat {
    Boxes,
    Masks,
    BoxesAndMasks,
}

#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub name: String,
    pub root: PathBuf,
    pub frames: Vec<PathBuf>,
    /// Per-frame boxes or polygons from `groundtruth.txt`.
    pub boxes: Option<Vec<Region>>,
    pub masks: Option<Vec<PathBuf>>,
    pub format: GroundTruthFormat,
    /// Only the first frame is annotated.
    pub first_frame_only: bool,
}

pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    v.sort();
    Ok(v)
}

impl SequenceDataset {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingFile(root.to_path_buf()));
        }
        let frame_dir = root.join(FRAME_DIR);
        let frames = image_files(if frame_dir.is_dir() { &frame_dir } else { root })?;
        if frames.is_empty() {
            return Err(Error::MissingFile(root.join("*.png")));
        }
        let gt_path = root.join(GROUND_TRUTH_FILE);
        let boxes = gt_path.is_file().then(|| read_ground_truth(&gt_path)).transpose()?;
        let mask_dir = root.join(MASK_DIR);
        let masks = mask_dir.is_dir().then(|| image_files(&mask_dir)).transpose()?.filter(|m| !m.is_empty());
        let format = match (&boxes, &masks) {
            (Some(_), Some(_)) => GroundTruthFormat::BoxesAndMasks,
            (Some(_), None) => GroundTruthFormat::Boxes,
            (None, Some(_)) => GroundTruthFormat::Masks,
            (None, None) => return Err(Error::MissingFile(gt_path)),
        };
        let n = frames.len();
        let counts = [boxes.as_ref().map(Vec::len), masks.as_ref().map(Vec::len)];
        let first_frame_only = n > 1 && counts.iter().flatten().all(|&c| c == 1);
        for (c, what) in counts.into_iter().zip([GROUND_TRUTH_FILE, MASK_DIR]) {
            if let Some(c) = c {
                if c != n && !first_frame_only {
                    let line = if what == GROUND_TRUTH_FILE { c + 1 } else { 0 };
                    return Err(Error::GroundTruth {
                        path: root.join(what),
                        line,
                        message: format!("{c} annotations for {n} frames"),
                    });
                }
            }
        }
        Ok(SequenceDataset {
            name: root.file_name().map_or_else(|| "sequence".into(), |s| s.to_string_lossy().into_owned()),
            root: root.to_path_buf(),
            frames,
            boxes,
            masks,
            format,
            first_frame_only,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> Result<(usize, usize)> {
        let (w, h) = image::image_dimensions(&self.frames[0])?;
        Ok((w as usize, h as usize))
    }

    pub fn load_mask(&self, t: usize) -> Result<Option<Mask>> {
        self.masks.as_ref().and_then(|m| m.get(t)).map(|p| read_mask(p)).transpose()
    }

    /// Ground truth regions, masks preferred. For first-frame-only datasets
    /// this has a single entry.
    pub fn regions(&self) -> Result<Vec<Region>> {
        if let Some(m) = &self.masks {
            return m.iter().map(|p| Ok(Region::Mask(read_mask(p)?))).collect();
        }
        Ok(self.boxes.clone().unwrap_or_default())
    }

    /// Ground truth used for box-overlap protocols: boxes when present,
    /// masks otherwise.
    pub fn box_regions(&self) -> Result<Vec<Region>> {
        match &self.boxes {
            Some(b) => Ok(b.clone()),
            None => self.regions(),
        }
    }

    pub fn mask_sequence(&self) -> Result<Option<Vec<Mask>>> {
        self.masks.as_ref().map(|m| m.iter().map(|p| read_mask(p)).collect()).transpose()
    }
}

impl FrameSource for SequenceDataset {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<Tensor> {
        let p = self.frames.get(index).ok_or_else(|| Error::MissingFile(self.root.join(format!("frame {index}"))))?;
        read_frame(p)
    }
}

/// Sequence directories under `root`, sorted by name.
pub fn open_dataset(root: &Path) -> Result<Vec<SequenceDataset>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingFile(root.join("<sequence>")));
    }
    dirs.iter().map(|d| SequenceDataset::open(d)).collect()
}

pub fn read_frame(path: &Path) -> Result<Tensor> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let plane = w * h;
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.data_mut()[c * plane + y as usize * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

pub fn write_frame(path: &Path, frame: &Tensor) -> Result<()> {
    let (_, h, w) = frame.dims3()?;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| (frame.at3(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path)?;
    Ok(())
}

/// Nonzero pixels are foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask::from_vec(w, h, img.pixels().map(|p| p.0[0] != 0).collect()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

pub fn mask_file_name(t: usize) -> String {
    format!("{t:05}.png")
}

fn parse_numbers(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", s.trim())))
        .collect()
}

/// Region of a 4- or 8-number record. Zero-area boxes and all-zero or
/// non-finite records are empty.
fn region_from_numbers(v: &[f64]) -> std::result::Result<Region, String> {
    if v.iter().any(|x| x.is_nan()) || v.iter().all(|&x| x == 0.0) {
        return Ok(Region::Empty);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    match v.len() {
        4 => {
            let (x, y, w, h) = (v[0], v[1], v[2], v[3]);
            if w < 0.0 || h < 0.0 {
                return Err("negative box size".into());
            }
            if w == 0.0 || h == 0.0 {
                return Ok(Region::Empty);
            }
            Ok(RotatedBox::axis_aligned(x, y, x + w, y + h).into())
        }
        8 => Ok(Region::Polygon(v.chunks(2).map(|p| Point::new(p[0], p[1])).collect())),
        n => Err(format!("expected 4 or 8 numbers, got {n}")),
    }
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<Region>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_numbers(l).and_then(|v| region_from_numbers(&v)).map_err(|message| Error::GroundTruth {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

/// One line of a box prediction file.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Init,
    Failure,
    Skipped,
    Region(Region),
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let err = |message: String| Error::GroundTruth {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            match l.trim() {
                "1" => Ok(Prediction::Init),
                "2" => Ok(Prediction::Failure),
                "0" => Ok(Prediction::Skipped),
                "" => Ok(Prediction::Region(Region::Empty)),
                s => parse_numbers(s).and_then(|v| region_from_numbers(&v)).map(Prediction::Region).map_err(err),
            }
        })
        .collect()
}

/// Polygon corners of a region as written to a box file.
pub fn polygon_of(region: &Region) -> [Point; 4] {
    match region {
        Region::Polygon(p) if p.len() == 4 => [p[0], p[1], p[2], p[3]],
        Region::Polygon(p) => crate::boxfit::min_area_box(p).corners(),
        Region::Mask(m) => crate::eval::reference_box(m).map_or([Point::new(0.0, 0.0); 4], |b| b.corners()),
        Region::Empty => [Point::new(0.0, 0.0); 4],
    }
}

pub fn format_prediction(p: &Prediction) -> String {
    match p {
        Prediction::Init => "1".into(),
        Prediction::Failure => "2".into(),
        Prediction::Skipped => "0".into(),
        Prediction::Region(r) => polygon_of(r).iter().map(|c| format!("{:.6},{:.6}", c.x, c.y)).collect::<Vec<_>>().join(","),
    }
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut s = String::new();
    for p in predictions {
        s.push_str(&format_prediction(p));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Frame with the mask tinted red and the polygon outlined in green.
pub fn write_overlay(path: &Path, frame: &Tensor, mask: Option<&Mask>, polygon: &[Point; 4]) -> Result<()> {
    let (_, h, w) = frame.dims3()?;
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let tint = mask.is_some_and(|m| m.width() == w && m.height() == h && m.get(x, y));
        Rgb(std::array::from_fn(|c| {
            let v = frame.at3(c, y, x).clamp(0.0, 1.0);
            let v = if tint { 0.5 * v + if c == 0 { 0.5 } else { 0.0 } } else { v };
            (v * 255.0).round() as u8
        }))
    });
    for i in 0..4 {
        let (a, b) = (polygon[i], polygon[(i + 1) % 4]);
        let steps = (b.sub(a).norm().ceil() as usize).max(1);
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            let (x, y) = ((a.x + f * (b.x - a.x)).round(), (a.y + f * (b.y - a.y)).round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                img.put_pixel(x as u32, y as u32, Rgb([0, 255, 0]));
            }
        }
    }
    img.save(path)?;
    Ok(())
}
