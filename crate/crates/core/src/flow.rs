//! Dense optical flow over colour (and optionally depth) channels, and the
//! Difference-of-Gaussians motion features derived from it.
//!
//! The solver is a Horn–Schunck scheme: the data term sums the linearised
//! constancy residuals of every channel, the smoothness term penalises the
//! squared flow gradient with weight `alpha²`. Each pyramid level warps the
//! second frame by the current estimate and runs Jacobi sweeps of the
//! per-pixel 2×2 normal equations.
//!
//! Three refinements keep motion from leaking across object boundaries:
//! a Charbonnier data term solved by reweighting, smoothness weakened across
//! strong edges of the first frame (depth edges included when depth is used),
//! and a forward-backward check whose failing pixels are filled from their
//! neighbours instead of matched. A 5×5 median filter follows every warp.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RgbdFrame;
use crate::grid::{downsample2, gaussian_blur, mirror_x, resample_bilinear, sample_bilinear, Dims, Grid};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch(Dims, Dims),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Smoothness weight on the [0,1] channel scale.
    pub alpha: f64,
    pub levels: usize,
    /// Re-linearisations (warps of the second frame) per pyramid level.
    pub warps: usize,
    pub iterations: usize,
    /// Charbonnier scale of the data term; 0 keeps it quadratic.
    pub data_eps: f64,
    /// Image-driven smoothness: the regulariser at a pixel is scaled by
    /// 1/√(1 + |∇I|²/κ²), |∇I|² summed over the first frame's channels; 0
    /// disables it.
    pub edge_kappa: f64,
    /// Forward-backward consistency check; pixels that fail it lose their
    /// data term in a final refinement and are filled by the smoothness term.
    pub occlusion_check: bool,
    /// Data weight updates per warp when the data term is robust.
    pub reweights: usize,
    /// Side of the median filter applied to the flow after every warp; 0 or
    /// 1 disables it.
    pub median: usize,
    /// Gaussian pre-smoothing of every channel before differentiation.
    pub presmooth_sigma: f64,
    /// Relative weight of the depth channel in the data term.
    pub depth_weight: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            alpha: 15.0 / 255.0,
            levels: 3,
            warps: 1,
            iterations: 100,
            data_eps: 0.02,
            edge_kappa: 0.02,
            occlusion_check: true,
            reweights: 5,
            median: 5,
            presmooth_sigma: 1.0,
            depth_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Grid,
    pub v: Grid,
    pub channels_used: usize,
}

impl FlowField {
    pub fn zeros(dims: Dims, channels_used: usize) -> Self {
        Self {
            u: Grid::zeros(dims.shape()),
            v: Grid::zeros(dims.shape()),
            channels_used,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.u)
    }

    pub fn magnitude(&self) -> Grid {
        ndarray::Zip::from(&self.u)
            .and(&self.v)
            .map_collect(|&u, &v| u.hypot(v))
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitude().mean().unwrap_or(0.0)
    }

    /// Mean endpoint error against a reference field.
    pub fn endpoint_error(&self, reference: &FlowField) -> f64 {
        let mut total = 0.0;
        for ((u, v), (ru, rv)) in self.u.iter().zip(&self.v).zip(reference.u.iter().zip(&reference.v)) {
            total += (u - ru).hypot(v - rv);
        }
        total / self.u.len() as f64
    }

    /// Left-right mirror with the horizontal component negated.
    pub fn mirrored(&self) -> Self {
        Self {
            u: mirror_x(&self.u).mapv(|x| -x),
            v: mirror_x(&self.v),
            channels_used: self.channels_used,
        }
    }
}

fn channels(frame: &RgbdFrame, use_depth: bool, cfg: &FlowConfig) -> Vec<Grid> {
    let mut out: Vec<Grid> = frame.rgb.to_vec();
    if use_depth {
        // Scaling a channel by √w weights its squared residual by w.
        out.push(&frame.depth * cfg.depth_weight.sqrt());
    }
    out.into_iter()
        .map(|c| gaussian_blur(&c, cfg.presmooth_sigma))
        .collect()
}

/// Central differences, one-sided at the border.
fn gradients(g: &Grid) -> (Grid, Grid) {
    let (h, w) = g.dim();
    let gx = Grid::from_shape_fn((h, w), |(y, x)| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        if r == l {
            0.0
        } else {
            (g[[y, r]] - g[[y, l]]) / (r - l) as f64
        }
    });
    let gy = Grid::from_shape_fn((h, w), |(y, x)| {
        let (t, b) = (y.saturating_sub(1), (y + 1).min(h - 1));
        if b == t {
            0.0
        } else {
            (g[[b, x]] - g[[t, x]]) / (b - t) as f64
        }
    });
    (gx, gy)
}

fn warp(g: &Grid, u: &Grid, v: &Grid) -> Grid {
    Grid::from_shape_fn(g.dim(), |(y, x)| {
        sample_bilinear(g, x as f64 + u[[y, x]], y as f64 + v[[y, x]])
    })
}

/// Per-pixel weight that is 1 for small arguments and falls off as ε/|x|
/// beyond ε (normalised Charbonnier). `eps = 0` gives the quadratic penalty.
fn robust_weight(x2: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        1.0 / (1.0 + x2 / (eps * eps)).sqrt()
    } else {
        1.0
    }
}

/// Weighted mean of the 4-neighbours (border replicated) and the mean edge
/// weight. Edge weights are the average of the two pixel weights.
fn weighted_neighbour_mean(g: &Grid, s: &Grid, out: &mut Grid, norm: &mut Grid) {
    let (h, w) = g.dim();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ny, nx) in [
                (y, x.saturating_sub(1)),
                (y, (x + 1).min(w - 1)),
                (y.saturating_sub(1), x),
                ((y + 1).min(h - 1), x),
            ] {
                let e = 0.5 * (s[[y, x]] + s[[ny, nx]]);
                acc += e * g[[ny, nx]];
                wsum += e;
            }
            out[[y, x]] = 0.25 * acc;
            norm[[y, x]] = 0.25 * wsum;
        }
    }
}

struct Linearised {
    ix: Grid,
    iy: Grid,
    it: Grid,
}

fn refine_level(a: &[Grid], b: &[Grid], u: &mut Grid, v: &mut Grid, data_mask: Option<&Grid>, cfg: &FlowConfig) {
    let dims = Dims::of(u);
    let (u0, v0) = (u.clone(), v.clone());
    let lin: Vec<Linearised> = a
        .iter()
        .zip(b)
        .map(|(ca, cb)| {
            let bw = warp(cb, &u0, &v0);
            let (ax, ay) = gradients(ca);
            let (bx, by) = gradients(&bw);
            Linearised {
                ix: (ax + bx) * 0.5,
                iy: (ay + by) * 0.5,
                it: bw - ca,
            }
        })
        .collect();
    let mut edge = Grid::ones(dims.shape());
    if cfg.edge_kappa > 0.0 {
        let mut g2 = Grid::zeros(dims.shape());
        for ca in a {
            let (ax, ay) = gradients(ca);
            g2 = g2 + &ax * &ax + &ay * &ay;
        }
        edge = g2.mapv(|v| robust_weight(v, cfg.edge_kappa));
    }
    let robust = cfg.data_eps > 0.0;
    let rounds = if robust { cfg.reweights.max(1) } else { 1 };
    let sweeps = cfg.iterations.div_ceil(rounds);
    let a2 = cfg.alpha * cfg.alpha;
    let bound = dims.width as f64;
    let n = dims.area();
    let mut ub = Grid::zeros(dims.shape());
    let mut vb = Grid::zeros(dims.shape());
    let mut norm = Grid::zeros(dims.shape());
    for _ in 0..rounds {
        // Structure tensor J and J·w0 − b per pixel, summed over channels
        // with the data weights at the current estimate.
        let mut jxx = vec![0.0; n];
        let mut jxy = vec![0.0; n];
        let mut jyy = vec![0.0; n];
        let mut rx = vec![0.0; n];
        let mut ry = vec![0.0; n];
        for l in &lin {
            for (k, (y, x)) in dims_iter(dims).enumerate() {
                let p = [y, x];
                let (ix, iy) = (l.ix[p], l.iy[p]);
                let (du, dv) = (u[p] - u0[p], v[p] - v0[p]);
                let d = robust_weight((l.it[p] + ix * du + iy * dv).powi(2), cfg.data_eps) * data_mask.map_or(1.0, |m| m[p]);
                jxx[k] += d * ix * ix;
                jxy[k] += d * ix * iy;
                jyy[k] += d * iy * iy;
                // Linearised about w0: residual = it + ∇I·(w − w0).
                let c = l.it[p] - ix * u0[p] - iy * v0[p];
                rx[k] -= d * ix * c;
                ry[k] -= d * iy * c;
            }
        }
                for _ in 0..sweeps {
            weighted_neighbour_mean(u, &edge, &mut ub, &mut norm);
            weighted_neighbour_mean(v, &edge, &mut vb, &mut norm);
            for (k, ((uu, vv), ((ubar, vbar), sn))) in u
                .iter_mut()
                .zip(v.iter_mut())
                .zip(ub.iter().zip(vb.iter()).zip(norm.iter()))
                .enumerate()
            {
                // (J + α²s̄I) w = α² w̄ + J w0 − b
                let (m11, m12, m22) = (jxx[k] + a2 * sn, jxy[k], jyy[k] + a2 * sn);
                let (r1, r2) = (a2 * ubar + rx[k], a2 * vbar + ry[k]);
                let det = m11 * m22 - m12 * m12;
                *uu = ((m22 * r1 - m12 * r2) / det).clamp(-bound, bound);
                *vv = ((m11 * r2 - m12 * r1) / det).clamp(-bound, bound);
            }
        }
    }
}

fn dims_iter(dims: Dims) -> impl Iterator<Item = (usize, usize)> {
    (0..dims.height).flat_map(move |y| (0..dims.width).map(move |x| (y, x)))
}

fn median_filter(g: &Grid, size: usize) -> Grid {
    let (h, w) = g.dim();
    let r = (size / 2) as i64;
    let mut window = Vec::with_capacity(size * size);
    Grid::from_shape_fn((h, w), |(y, x)| {
        window.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                window.push(g[[yy, xx]]);
            }
        }
        let mid = window.len() / 2;
        *window.select_nth_unstable_by(mid, f64::total_cmp).1
    })
}

/// Flow from `frame_a` to `frame_b` (a pixel at `p` in `a` is found at
/// `p + (u, v)` in `b`).
pub fn optical_flow(frame_a: &RgbdFrame, frame_b: &RgbdFrame, use_depth: bool, cfg: &FlowConfig) -> Result<FlowField, FlowError> {
    let dims = frame_a.dims();
    if frame_b.dims() != dims {
        return Err(FlowError::DimensionMismatch(dims, frame_b.dims()));
    }
    let pyr_a = pyramid(channels(frame_a, use_depth, cfg), cfg.levels);
    let pyr_b = pyramid(channels(frame_b, use_depth, cfg), cfg.levels);
    let (mut u, mut v) = coarse_to_fine(&pyr_a, &pyr_b, cfg);
    if cfg.occlusion_check {
        let (bu, bv) = coarse_to_fine(&pyr_b, &pyr_a, cfg);
        let visible = consistency_mask(&u, &v, &bu, &bv);
        for _ in 0..cfg.warps.max(1) {
            refine_level(&pyr_a[0], &pyr_b[0], &mut u, &mut v, Some(&visible), cfg);
        }
    }
    Ok(FlowField {
        u,
        v,
        channels_used: if use_depth { 4 } else { 3 },
    })
}

fn pyramid(finest: Vec<Grid>, levels: usize) -> Vec<Vec<Grid>> {
    let mut pyr = vec![finest];
    for _ in 1..levels.max(1) {
        let last = pyr.last().expect("non-empty");
        let (h, w) = last[0].dim();
        if h % 2 == 1 || w % 2 == 1 || h < 8 || w < 8 {
            break;
        }
        let next = last.iter().map(downsample2).collect();
        pyr.push(next);
    }
    pyr
}

fn coarse_to_fine(pyr_a: &[Vec<Grid>], pyr_b: &[Vec<Grid>], cfg: &FlowConfig) -> (Grid, Grid) {
    let coarsest = Dims::of(&pyr_a.last().expect("non-empty")[0]);
    let mut u = Grid::zeros(coarsest.shape());
    let mut v = Grid::zeros(coarsest.shape());
    for (la, lb) in pyr_a.iter().zip(pyr_b).rev() {
        let ldims = Dims::of(&la[0]);
        if Dims::of(&u) != ldims {
            let scale = ldims.width as f64 / u.ncols() as f64;
            u = resample_bilinear(&u, ldims) * scale;
            v = resample_bilinear(&v, ldims) * scale;
        }
        for _ in 0..cfg.warps.max(1) {
            refine_level(la, lb, &mut u, &mut v, None, cfg);
            if cfg.median > 1 {
                u = median_filter(&u, cfg.median);
                v = median_filter(&v, cfg.median);
            }
        }
    }
    (u, v)
}

/// 1 where the forward flow and the backward flow at its target cancel, 0
/// where they disagree (the pixel is likely occluded in the second frame).
fn consistency_mask(u: &Grid, v: &Grid, bu: &Grid, bv: &Grid) -> Grid {
    Grid::from_shape_fn(u.dim(), |(y, x)| {
        let (fu, fv) = (u[[y, x]], v[[y, x]]);
        let (tx, ty) = (x as f64 + fu, y as f64 + fv);
        let (ru, rv) = (sample_bilinear(bu, tx, ty), sample_bilinear(bv, tx, ty));
        let mismatch = (fu + ru).powi(2) + (fv + rv).powi(2);
        let scale = fu * fu + fv * fv + ru * ru + rv * rv;
        if mismatch > 0.01 * scale + 0.5 {
            0.0
        } else {
            1.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            sigma1: 2.0,
            sigma2: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionFeatures {
    pub dog_u: Grid,
    pub dog_v: Grid,
    pub dog_mag: Grid,
}

impl MotionFeatures {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dog_u: Grid::zeros(dims.shape()),
            dog_v: Grid::zeros(dims.shape()),
            dog_mag: Grid::zeros(dims.shape()),
        }
    }
}

pub fn difference_of_gaussians(g: &Grid, sigma1: f64, sigma2: f64) -> Grid {
    gaussian_blur(g, sigma1) - gaussian_blur(g, sigma2)
}

/// DoG responses of the current flow components and of the change in flow
/// magnitude since the previous step.
pub fn motion_features(flow_prev: &FlowField, flow_curr: &FlowField, cfg: &MotionConfig) -> Result<MotionFeatures, FlowError> {
    if flow_prev.dims() != flow_curr.dims() {
        return Err(FlowError::DimensionMismatch(flow_prev.dims(), flow_curr.dims()));
    }
    let dmag = flow_curr.magnitude() - flow_prev.magnitude();
    Ok(MotionFeatures {
        dog_u: difference_of_gaussians(&flow_curr.u, cfg.sigma1, cfg.sigma2),
        dog_v: difference_of_gaussians(&flow_curr.v, cfg.sigma1, cfg.sigma2),
        dog_mag: difference_of_gaussians(&dmag, cfg.sigma1, cfg.sigma2),
    })
}

const FLOW_MAGIC: &[u8; 4] = b"DGFL";

/// Writes one raster: "DGFL", width, height, channel id (u32 LE each), then
/// row-major f32 LE values.
pub fn write_raster(path: &Path, grid: &Grid, channel: u32) -> Result<(), FlowError> {
    let (h, w) = grid.dim();
    let mut buf = Vec::with_capacity(16 + 4 * w * h);
    buf.extend_from_slice(FLOW_MAGIC);
    for x in [w as u32, h as u32, channel] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for &v in grid.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a raster written by [`write_raster`], returning it with its
/// channel id.
pub fn read_raster(path: &Path) -> Result<(Grid, u32), FlowError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[..4] != FLOW_MAGIC {
        return Err(FlowError::Format(format!("{}: not a flow raster", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes"));
    let (w, h, channel) = (word(4) as usize, word(8) as usize, word(12));
    if buf.len() != 16 + 4 * w * h {
        return Err(FlowError::Format(format!("{}: expected {}x{} values", path.display(), w, h)));
    }
    let data = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((Grid::from_shape_vec((h, w), data).expect("checked length"), channel))
}

pub fn write_flow(path_u: &Path, path_v: &Path, flow: &FlowField) -> Result<(), FlowError> {
    write_raster(path_u, &flow.u, 0)?;
    write_raster(path_v, &flow.v, 1)
}

pub fn read_flow(path_u: &Path, path_v: &Path) -> Result<FlowField, FlowError> {
    let (u, _) = read_raster(path_u)?;
    let (v, _) = read_raster(path_v)?;
    if u.dim() != v.dim() {
        return Err(FlowError::DimensionMismatch(Dims::of(&u), Dims::of(&v)));
    }
    Ok(FlowField { u, v, channels_used: 3 })
}
