//! On-disk dataset layout and loaders.
//!
//! ```text
//! root/manifest.json
//! root/videos/<id>/rgb/%06d.png        8-bit RGB
//! root/videos/<id>/depth/%06d.png      16-bit gray, 0 = invalid
//! root/videos/<id>/fixations.csv       frame,viewer,x,y
//! root/videos/<id>/annotations.csv     frame,label,x,y,sigma (optional)
//! ```
//!
//! Frames are resampled to [`WORKING_DIMS`] (bilinear for color, nearest for
//! depth) and depth is min-max normalised per video over valid pixels.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{resample_bilinear, resample_nearest, Dims, Grid};

pub const WORKING_DIMS: Dims = Dims::new(128, 96);
pub const FPS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("video {video}: frame {index} missing")]
    MissingFrame { video: String, index: usize },
    #[error("video {video} frame {index}: {what}")]
    DimensionMismatch {
        video: String,
        index: usize,
        what: String,
    },
    #[error("{path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    ParseError {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}:{line}: coordinate ({x}, {y}) outside [0,1]")]
    OutOfRange { path: PathBuf, line: u64, x: f64, y: f64 },
    #[error("{path}:{line}: frame {frame} beyond the video's {frames} frames")]
    FrameOutOfRange {
        path: PathBuf,
        line: u64,
        frame: usize,
        frames: usize,
    },
    #[error("split does not partition the videos: missing {missing:?}, unknown {unknown:?}")]
    SplitIncomplete {
        missing: Vec<String>,
        unknown: Vec<String>,
    },
    #[error("video {video}: manifest declares {declared} frames, found {found}")]
    CountMismatch {
        video: String,
        declared: usize,
        found: usize,
    },
    #[error("video {0} is not in the manifest")]
    UnknownVideo(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One synchronized color + depth frame at working resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub index: usize,
    /// R, G, B planes in [0,1].
    pub rgb: [Grid; 3],
    /// Normalised depth in [0,1]; 0 is the nearest valid value of the video.
    pub depth: Grid,
    /// False where the source had no depth and the value was filled in.
    pub valid_mask: Array2<bool>,
}

impl RgbdFrame {
    /// A frame with every depth pixel marked valid.
    pub fn new(index: usize, rgb: [Grid; 3], depth: Grid) -> Self {
        let valid_mask = Array2::from_elem(depth.dim(), true);
        Self {
            index,
            rgb,
            depth,
            valid_mask,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.depth)
    }

    pub fn intensity(&self) -> Grid {
        (&self.rgb[0] + &self.rgb[1] + &self.rgb[2]) / 3.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub video_id: String,
    pub frames: Vec<RgbdFrame>,
    pub fps: f64,
    pub dims: Dims,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    #[serde(rename = "frame")]
    pub frame_index: usize,
    #[serde(rename = "viewer")]
    pub viewer_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationLabel {
    Face,
    Body,
}

/// A high-level cue: normalised position and a blob size in working pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    pub label: AnnotationLabel,
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthUnit {
    Mm,
    Disparity,
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub frames: usize,
    pub depth_unit: DepthUnit,
    pub annotations: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub videos: Vec<VideoEntry>,
    pub split: BTreeMap<String, Split>,
}

impl DatasetManifest {
    pub fn entry(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Video ids of one split, in manifest order.
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.videos
            .iter()
            .filter(|v| self.split.get(&v.id) == Some(&split))
            .map(|v| v.id.clone())
            .collect()
    }

    /// Every video in exactly one split and no unknown ids.
    pub fn check_split(&self) -> Result<()> {
        let ids: BTreeSet<&str> = self.videos.iter().map(|v| v.id.as_str()).collect();
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !self.split.contains_key(**id))
            .map(|s| s.to_string())
            .collect();
        let unknown: Vec<String> = self
            .split
            .keys()
            .filter(|k| !ids.contains(k.as_str()))
            .cloned()
            .collect();
        if missing.is_empty() && unknown.is_empty() {
            Ok(())
        } else {
            Err(DatasetError::SplitIncomplete { missing, unknown })
        }
    }
}

pub fn video_dir(root: &Path, id: &str) -> PathBuf {
    root.join("videos").join(id)
}

pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::ParseError {
        path,
        line: e.line() as u64,
        reason: e.to_string(),
    })
}

/// Sorted frame indices of `%06d.png` files in a directory.
fn frame_indices(dir: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 6 && stem.bytes().all(|b| b.is_ascii_digit()) {
                out.push(stem.parse().expect("six digits"));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn first_gap(indices: &[usize]) -> Option<usize> {
    indices
        .iter()
        .enumerate()
        .find(|(i, &v)| *i != v)
        .map(|(i, _)| i)
}

struct RawFrame {
    rgb: [Grid; 3],
    depth: Vec<u16>,
    dims: Dims,
}

fn corrupt(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn decode_frame(video: &str, dir: &Path, index: usize) -> Result<RawFrame> {
    let rgb_path = dir.join("rgb").join(frame_name(index));
    let depth_path = dir.join("depth").join(frame_name(index));
    let rgb = image::open(&rgb_path).map_err(|e| corrupt(&rgb_path, e))?.to_rgb8();
    let depth_img = image::open(&depth_path).map_err(|e| corrupt(&depth_path, e))?;
    let depth = match depth_img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            ImageBuffer::from_fn(w, h, |x, y| Luma([buf.get_pixel(x, y)[0] as u16]))
        }
        other => {
            return Err(corrupt(
                &depth_path,
                format!("expected single-channel depth, got {:?}", other.color()),
            ))
        }
    };
    if rgb.dimensions() != depth.dimensions() {
        return Err(DatasetError::DimensionMismatch {
            video: video.to_string(),
            index,
            what: format!("rgb {:?} vs depth {:?}", rgb.dimensions(), depth.dimensions()),
        });
    }
    let (w, h) = rgb.dimensions();
    let dims = Dims::new(w as usize, h as usize);
    let plane = |c: usize| Grid::from_shape_fn(dims.shape(), |(y, x)| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0);
    Ok(RawFrame {
        rgb: [plane(0), plane(1), plane(2)],
        depth: depth.into_raw(),
        dims,
    })
}

/// Replaces every invalid (zero) depth by the value of the nearest valid
/// pixel (breadth-first over 4-neighbours, ties resolved by scan order).
fn fill_invalid(depth: &[u16], dims: Dims) -> (Vec<u16>, Vec<bool>) {
    let valid: Vec<bool> = depth.iter().map(|&d| d != 0).collect();
    let mut filled = depth.to_vec();
    let mut seen = valid.clone();
    let mut queue: VecDeque<usize> = (0..depth.len()).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % dims.width, i / dims.width);
        let mut push = |j: usize| {
            if !seen[j] {
                seen[j] = true;
                filled[j] = filled[i];
                queue.push_back(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < dims.width {
            push(i + 1);
        }
        if y > 0 {
            push(i - dims.width);
        }
        if y + 1 < dims.height {
            push(i + dims.width);
        }
    }
    (filled, valid)
}

/// Loads one video at [`WORKING_DIMS`].
pub fn load_video(root: &Path, video_id: &str) -> Result<VideoSequence> {
    let dir = video_dir(root, video_id);
    let rgb_idx = frame_indices(&dir.join("rgb"))?;
    let depth_idx = frame_indices(&dir.join("depth"))?;
    if let Some(i) = first_gap(&rgb_idx) {
        return Err(DatasetError::MissingFrame {
            video: video_id.to_string(),
            index: i,
        });
    }
    if let Some(i) = first_gap(&depth_idx).or_else(|| {
        (depth_idx.len() != rgb_idx.len()).then(|| depth_idx.len().min(rgb_idx.len()))
    }) {
        return Err(DatasetError::MissingFrame {
            video: video_id.to_string(),
            index: i,
        });
    }
    let raw: Vec<RawFrame> = rgb_idx
        .par_iter()
        .map(|&i| decode_frame(video_id, &dir, i))
        .collect::<Result<_>>()?;
    if let Some(first) = raw.first() {
        if let Some((i, f)) = raw.iter().enumerate().find(|(_, f)| f.dims != first.dims) {
            return Err(DatasetError::DimensionMismatch {
                video: video_id.to_string(),
                index: i,
                what: format!("frame size {:?} differs from {:?}", f.dims, first.dims),
            });
        }
    }
    let unit = read_manifest(root)
        .ok()
        .and_then(|m| m.entry(video_id).map(|e| e.depth_unit))
        .unwrap_or(DepthUnit::Normalized);

    let staged: Vec<(usize, [Grid; 3], Grid, Array2<bool>)> = raw
        .into_par_iter()
        .enumerate()
        .map(|(index, f)| {
            let (filled, valid) = fill_invalid(&f.depth, f.dims);
            let depth = Grid::from_shape_vec(f.dims.shape(), filled.into_iter().map(f64::from).collect())
                .expect("shape matches");
            let valid = Array2::from_shape_vec(f.dims.shape(), valid).expect("shape matches");
            let rgb = f.rgb.map(|p| resample_bilinear(&p, WORKING_DIMS).mapv(|v| v.clamp(0.0, 1.0)));
            (
                index,
                rgb,
                resample_nearest(&depth, WORKING_DIMS),
                resample_nearest(&valid, WORKING_DIMS),
            )
        })
        .collect();

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, _, depth, valid) in &staged {
        for (d, &ok) in depth.iter().zip(valid.iter()) {
            if ok {
                lo = lo.min(*d);
                hi = hi.max(*d);
            }
        }
    }
    let range = hi - lo;
    let frames = staged
        .into_iter()
        .map(|(index, rgb, depth, valid_mask)| {
            let depth = depth.mapv(|d| {
                if !(range > 0.0) {
                    0.0
                } else if unit == DepthUnit::Disparity {
                    ((hi - d) / range).clamp(0.0, 1.0)
                } else {
                    ((d - lo) / range).clamp(0.0, 1.0)
                }
            });
            RgbdFrame {
                index,
                rgb,
                depth,
                valid_mask,
            }
        })
        .collect();
    Ok(VideoSequence {
        video_id: video_id.to_string(),
        frames,
        fps: FPS,
        dims: WORKING_DIMS,
    })
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map(|p| p.line()).unwrap_or(0)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| DatasetError::ParseError {
        path: path.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(DatasetError::ParseError {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("header must be {:?}", expected.join(",")),
        });
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DatasetError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => DatasetError::ParseError {
                path: path.to_path_buf(),
                line: 0,
                reason: format!("{other:?}"),
            },
        })
}

/// Reads `fixations.csv`, sorted by `(frame, viewer)`.
pub fn load_fixations(root: &Path, video_id: &str) -> Result<Vec<FixationRecord>> {
    let path = video_dir(root, video_id).join("fixations.csv");
    let frames = read_manifest(root)
        .ok()
        .and_then(|m| m.entry(video_id).map(|e| e.frames));
    let mut rdr = open_csv(&path)?;
    check_header(&path, &mut rdr, &["frame", "viewer", "x", "y"])?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<FixationRecord>() {
        let rec = row.map_err(|e| DatasetError::ParseError {
            path: path.clone(),
            line: csv_line(&e),
            reason: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        if !(0.0..=1.0).contains(&rec.x) || !(0.0..=1.0).contains(&rec.y) {
            return Err(DatasetError::OutOfRange {
                path,
                line,
                x: rec.x,
                y: rec.y,
            });
        }
        if let Some(frames) = frames.filter(|&n| rec.frame_index >= n) {
            return Err(DatasetError::FrameOutOfRange {
                path,
                line,
                frame: rec.frame_index,
                frames,
            });
        }
        out.push(rec);
    }
    out.sort_by(|a, b| (a.frame_index, &a.viewer_id).cmp(&(b.frame_index, &b.viewer_id)));
    Ok(out)
}

/// Reads an annotation file; `file` is relative to the video directory.
pub fn load_annotations(root: &Path, video_id: &str, file: &str) -> Result<Vec<Annotation>> {
    let path = video_dir(root, video_id).join(file);
    let mut rdr = open_csv(&path)?;
    check_header(&path, &mut rdr, &["frame", "label", "x", "y", "sigma"])?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<Annotation>() {
        let a = row.map_err(|e| DatasetError::ParseError {
            path: path.clone(),
            line: csv_line(&e),
            reason: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        if !(0.0..=1.0).contains(&a.x) || !(0.0..=1.0).contains(&a.y) {
            return Err(DatasetError::OutOfRange {
                path,
                line,
                x: a.x,
                y: a.y,
            });
        }
        if !(a.sigma > 0.0) {
            return Err(DatasetError::ParseError {
                path,
                line,
                reason: "sigma must be positive".into(),
            });
        }
        out.push(a);
    }
    Ok(out)
}

/// Checks the manifest against what is on disk: every declared video loads
/// with the declared frame count and the split partitions the videos.
pub fn validate_manifest(root: &Path) -> Result<DatasetManifest> {
    let manifest = read_manifest(root)?;
    for entry in &manifest.videos {
        let dir = video_dir(root, &entry.id);
        if !dir.is_dir() {
            return Err(DatasetError::CountMismatch {
                video: entry.id.clone(),
                declared: entry.frames,
                found: 0,
            });
        }
        let video = load_video(root, &entry.id)?;
        if video.len() != entry.frames {
            return Err(DatasetError::CountMismatch {
                video: entry.id.clone(),
                declared: entry.frames,
                found: video.len(),
            });
        }
        load_fixations(root, &entry.id)?;
        if let Some(file) = &entry.annotations {
            load_annotations(root, &entry.id, file)?;
        }
    }
    manifest.check_split()?;
    Ok(manifest)
}

// ---------------------------------------------------------------- writers

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    ensure_dir(root)?;
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Writes one frame: color quantised to 8 bits, depth as raw 16-bit values.
pub fn write_frame(root: &Path, video_id: &str, index: usize, rgb: &[Grid; 3], depth_raw: &Array2<u16>) -> Result<()> {
    let dir = video_dir(root, video_id);
    let (rgb_dir, depth_dir) = (dir.join("rgb"), dir.join("depth"));
    ensure_dir(&rgb_dir)?;
    ensure_dir(&depth_dir)?;
    let (h, w) = rgb[0].dim();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(rgb[0][[y, x]]), q(rgb[1][[y, x]]), q(rgb[2][[y, x]])])
    });
    let path = rgb_dir.join(frame_name(index));
    img.save(&path).map_err(|e| corrupt(&path, e))?;
    let (dh, dw) = depth_raw.dim();
    let dimg: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(dw as u32, dh as u32, |x, y| Luma([depth_raw[[y as usize, x as usize]]]));
    let path = depth_dir.join(frame_name(index));
    dimg.save(&path).map_err(|e| corrupt(&path, e))
}

pub fn write_fixations(root: &Path, video_id: &str, records: &[FixationRecord]) -> Result<()> {
    let dir = video_dir(root, video_id);
    ensure_dir(&dir)?;
    let path = dir.join("fixations.csv");
    let mut out = String::from("frame,viewer,x,y\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.frame_index, r.viewer_id, r.x, r.y));
    }
    fs::write(&path, out).map_err(io_err(&path))
}

pub fn write_annotations(root: &Path, video_id: &str, file: &str, annotations: &[Annotation]) -> Result<()> {
    let dir = video_dir(root, video_id);
    ensure_dir(&dir)?;
    let path = dir.join(file);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    let mut text = String::from("frame,label,x,y,sigma\n");
    for a in annotations {
        let label = match a.label {
            AnnotationLabel::Face => "face",
            AnnotationLabel::Body => "body",
        };
        text.push_str(&format!("{},{},{},{},{}\n", a.frame, label, a.x, a.y, a.sigma));
    }
    f.write_all(text.as_bytes()).map_err(io_err(&path))
}

/// Fixations of one frame grouped by viewer, converted to working pixels.
pub fn frame_fixations(records: &[FixationRecord], frame: usize, dims: Dims) -> Vec<(String, Vec<crate::grid::Point>)> {
    let mut by_viewer: BTreeMap<&str, Vec<crate::grid::Point>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.frame_index == frame) {
        by_viewer
            .entry(&r.viewer_id)
            .or_default()
            .push(crate::grid::Point::new(r.x * dims.width as f64, r.y * dims.height as f64));
    }
    by_viewer.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
