//! Small raster helpers shared by every stage: blurring, resampling,
//! mirroring and point lookups on `H×W` grids (`grid[[y, x]]`).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub type Grid = Array2<f64>;

/// Raster size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// The frame center `(W/2, H/2)` in pixel coordinates.
    pub fn center(&self) -> Point {
        Point::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn of(grid: &Grid) -> Self {
        Self::new(grid.ncols(), grid.nrows())
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    /// Nearest pixel to a continuous point, clamped into the raster.
    pub fn pixel(&self, p: Point) -> (usize, usize) {
        let x = p.x.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let y = p.y.round().clamp(0.0, (self.height - 1) as f64) as usize;
        (x, y)
    }
}

/// A continuous image position; pixel `(x, y)` sits at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// `exp(-d²/2σ²)` sampled over the raster around `center`.
pub fn gaussian_blob(dims: Dims, center: Point, sigma: f64) -> Grid {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gx: Vec<f64> = (0..dims.width)
        .map(|x| (-(x as f64 - center.x).powi(2) * inv).exp())
        .collect();
    let gy: Vec<f64> = (0..dims.height)
        .map(|y| (-(y as f64 - center.y).powi(2) * inv).exp())
        .collect();
    Array2::from_shape_fn(dims.shape(), |(y, x)| gy[y] * gx[x])
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// One-dimensional pass with the kernel renormalised over the in-bounds
/// taps, so constants are preserved exactly up to rounding.
fn blur_line(src: &[f64], dst: &mut [f64], kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let n = src.len() as isize;
    for (i, out) in dst.iter_mut().enumerate() {
        let i = i as isize;
        let lo = (i - r).max(0);
        let hi = (i + r).min(n - 1);
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let k = kernel[(j - i + r) as usize];
            acc += k * src[j as usize];
            norm += k;
        }
        *out = acc / norm;
    }
}

/// Separable Gaussian blur with truncated, renormalised border kernels.
pub fn gaussian_blur(grid: &Grid, sigma: f64) -> Grid {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (h, w) = grid.dim();
    let mut tmp = Array2::zeros((h, w));
    let mut src = vec![0.0; w.max(h)];
    let mut dst = vec![0.0; w.max(h)];
    for y in 0..h {
        for x in 0..w {
            src[x] = grid[[y, x]];
        }
        blur_line(&src[..w], &mut dst[..w], &kernel);
        for x in 0..w {
            tmp[[y, x]] = dst[x];
        }
    }
    let mut out = Array2::zeros((h, w));
    for x in 0..w {
        for y in 0..h {
            src[y] = tmp[[y, x]];
        }
        blur_line(&src[..h], &mut dst[..h], &kernel);
        for y in 0..h {
            out[[y, x]] = dst[y];
        }
    }
    out
}

/// Bilinear resampling with pixel-center alignment; the identity when the
/// size is unchanged.
pub fn resample_bilinear(grid: &Grid, dims: Dims) -> Grid {
    let (sh, sw) = grid.dim();
    if (sh, sw) == dims.shape() {
        return grid.clone();
    }
    let map = |d: usize, s: usize, dn: usize| -> (usize, usize, f64) {
        let pos = ((d as f64 + 0.5) * s as f64 / dn as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..dims.width).map(|x| map(x, sw, dims.width)).collect();
    let ys: Vec<_> = (0..dims.height).map(|y| map(y, sh, dims.height)).collect();
    Array2::from_shape_fn(dims.shape(), |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
        let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Nearest-neighbour resampling with pixel-center alignment.
pub fn resample_nearest<T: Clone>(grid: &Array2<T>, dims: Dims) -> Array2<T> {
    let (sh, sw) = grid.dim();
    let pick = |d: usize, s: usize, dn: usize| (((d as f64 + 0.5) * s as f64 / dn as f64) as usize).min(s - 1);
    Array2::from_shape_fn(dims.shape(), |(y, x)| {
        grid[[pick(y, sh, dims.height), pick(x, sw, dims.width)]].clone()
    })
}

/// Left-right mirror image.
pub fn mirror_x<T: Clone>(grid: &Array2<T>) -> Array2<T> {
    let w = grid.ncols();
    Array2::from_shape_fn(grid.dim(), |(y, x)| grid[[y, w - 1 - x]].clone())
}

/// 2×2 box average; both sides must be even.
pub fn downsample2(grid: &Grid) -> Grid {
    let (h, w) = grid.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        0.25 * (grid[[2 * y, 2 * x]]
            + grid[[2 * y, 2 * x + 1]]
            + grid[[2 * y + 1, 2 * x]]
            + grid[[2 * y + 1, 2 * x + 1]])
    })
}

/// Bilinear sample at a continuous position, clamped at the border.
pub fn sample_bilinear(grid: &Grid, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
    let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mean of the grid over the disk of `radius` around `center` (at least the
/// nearest pixel).
pub fn disk_mean(grid: &Grid, center: Point, radius: f64) -> f64 {
    let dims = Dims::of(grid);
    let r = radius.max(0.0);
    let x0 = (center.x - r).floor().max(0.0) as usize;
    let y0 = (center.y - r).floor().max(0.0) as usize;
    let x1 = ((center.x + r).ceil() as usize).min(dims.width - 1);
    let y1 = ((center.y + r).ceil() as usize).min(dims.height - 1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if Point::new(x as f64, y as f64).distance(center) <= r {
                sum += grid[[y, x]];
                count += 1;
            }
        }
    }
    if count == 0 {
        let (x, y) = dims.pixel(center);
        grid[[y, x]]
    } else {
        sum / count as f64
    }
}

/// `(x, y)` of the first maximum in row-major order.
pub fn argmax(grid: &Grid) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for ((y, x), &v) in grid.indexed_iter() {
        if v > best_v {
            best_v = v;
            best = (x, y);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let g = Array2::from_elem((9, 13), 0.37);
        let b = gaussian_blur(&g, 2.5);
        assert!(b.iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn bilinear_identity_at_same_size_and_range_preserved() {
        let g = Array2::from_shape_fn((6, 8), |(y, x)| ((x * 7 + y * 3) % 5) as f64 / 4.0);
        assert_eq!(resample_bilinear(&g, Dims::new(8, 6)), g);
        let up = resample_bilinear(&g, Dims::new(21, 17));
        assert!(up.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn nearest_downsample_picks_existing_values() {
        let g = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64);
        let d = resample_nearest(&g, Dims::new(2, 2));
        assert_eq!(d, ndarray::arr2(&[[5.0, 7.0], [13.0, 15.0]]));
    }

    #[test]
    fn disk_mean_of_constant() {
        let g = Array2::from_elem((10, 10), 2.0);
        assert_eq!(disk_mean(&g, Point::new(0.0, 0.0), 3.0), 2.0);
        assert_eq!(disk_mean(&g, Point::new(4.3, 5.7), 0.0), 2.0);
    }
}
