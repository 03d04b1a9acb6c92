//! Saliency overlays: each frame blended with a colour-mapped map.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use thiserror::Error;

use crate::dataset::{frame_name, RgbdFrame};
use crate::grid::{resample_bilinear, Dims, Grid};

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("missing predictions: {frames} frames but {maps} maps")]
    MissingPredictions { frames: usize, maps: usize },
    #[error("cannot write {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// Blend weight at full saliency.
pub const BLEND: f64 = 0.5;

/// Blue → cyan → yellow → red ramp over [0,1].
pub fn colormap(s: f64) -> [f64; 3] {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 1.0]),
        (1.0 / 3.0, [0.0, 1.0, 1.0]),
        (2.0 / 3.0, [1.0, 1.0, 0.0]),
        (1.0, [1.0, 0.0, 0.0]),
    ];
    let s = s.clamp(0.0, 1.0);
    for w in STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        if s <= b {
            let t = (s - a) / (b - a);
            return [0, 1, 2].map(|i| ca[i] + t * (cb[i] - ca[i]));
        }
    }
    STOPS[3].1
}

/// Blends a frame with a map: alpha is `BLEND · s` where `s` is the map
/// scaled to a maximum of one, so zero saliency leaves the frame untouched.
pub fn blend(frame: &RgbdFrame, map: &Grid) -> [Grid; 3] {
    let dims = frame.dims();
    let map = if Dims::of(map) == dims {
        map.clone()
    } else {
        resample_bilinear(map, dims)
    };
    let max = map.fold(0.0f64, |m, &v| if v.is_finite() { m.max(v) } else { m });
    let s = map.mapv(|v| if max > 0.0 && v.is_finite() { (v / max).max(0.0) } else { 0.0 });
    [0, 1, 2].map(|c| {
        Grid::from_shape_fn(dims.shape(), |p| {
            let a = BLEND * s[p];
            (1.0 - a) * frame.rgb[c][p] + a * colormap(s[p])[c]
        })
    })
}

/// Writes one blended PNG per frame as `out_dir/%06d.png`.
pub fn overlay(frames: &[RgbdFrame], maps: &[Grid], out_dir: &Path) -> Result<Vec<PathBuf>, OverlayError> {
    if frames.len() != maps.len() {
        return Err(OverlayError::MissingPredictions {
            frames: frames.len(),
            maps: maps.len(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| OverlayError::Io {
        path: out_dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut written = Vec::with_capacity(frames.len());
    for (frame, map) in frames.iter().zip(maps) {
        let [r, g, b] = blend(frame, map);
        let (h, w) = r.dim();
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let p = [y as usize, x as usize];
            Rgb([q(r[p]), q(g[p]), q(b[p])])
        });
        let path = out_dir.join(frame_name(frame.index));
        img.save(&path).map_err(|e| OverlayError::Io {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        written.push(path);
    }
    Ok(written)
}
