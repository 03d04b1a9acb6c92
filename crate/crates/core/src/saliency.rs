//! Static per-frame saliency: a graph-based contrast model over intensity,
//! colour-opponency and (optionally) depth channels.
//!
//! Each feature channel is averaged onto a coarse lattice. A first Markov
//! chain with edge weights `|f_i − f_j|·F(d_ij) + ε` gathers mass at
//! locations that differ from their surroundings; a second chain with
//! weights `A_j·F(d_ij) + ε` concentrates that activation. The equilibria
//! of the second chain, divided by each cell's spatial degree `Σ_j F(d_ij)`
//! to cancel the border effect, are summed over channels with equal weight,
//! upsampled and max-normalised.

use serde::{Deserialize, Serialize};

use crate::dataset::RgbdFrame;
use crate::grid::{resample_bilinear, Dims, Grid};
use crate::maps::SaliencyMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSaliencyConfig {
    /// Working pixels per lattice cell along each axis.
    pub cell: usize,
    /// Spatial falloff of edge weights, as a fraction of the lattice width.
    pub falloff_fraction: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for GraphSaliencyConfig {
    fn default() -> Self {
        Self {
            cell: 4,
            falloff_fraction: 0.15,
            epsilon: 1e-6,
            tolerance: 1e-8,
            max_iterations: 1000,
        }
    }
}

/// Interface shared by the static saliency providers.
pub trait StaticSaliency: Sync {
    fn saliency(&self, frame: &RgbdFrame) -> SaliencyMap;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GraphSaliency {
    pub use_depth: bool,
    pub config: GraphSaliencyConfig,
}

impl GraphSaliency {
    pub fn new(use_depth: bool) -> Self {
        Self {
            use_depth,
            config: GraphSaliencyConfig::default(),
        }
    }
}

impl StaticSaliency for GraphSaliency {
    fn saliency(&self, frame: &RgbdFrame) -> SaliencyMap {
        graph_saliency(frame, self.use_depth, &self.config)
    }
}

/// The center-Gaussian baseline as a provider.
#[derive(Clone, Copy, Debug, Default)]
pub struct CenterSaliency;

impl StaticSaliency for CenterSaliency {
    fn saliency(&self, frame: &RgbdFrame) -> SaliencyMap {
        crate::maps::center_prior(frame.dims())
    }
}

/// Intensity, red-green, blue-yellow and optionally depth.
pub fn feature_channels(frame: &RgbdFrame, use_depth: bool) -> Vec<Grid> {
    let [r, g, b] = &frame.rgb;
    let mut out = vec![
        (r + g + b) / 3.0,
        r - g,
        b - &((r + g) * 0.5),
    ];
    if use_depth {
        out.push(frame.depth.clone());
    }
    out
}

/// Block means over a `lw × lh` lattice.
fn to_lattice(grid: &Grid, lw: usize, lh: usize) -> Vec<f64> {
    let (h, w) = grid.dim();
    let mut sums = vec![0.0; lw * lh];
    let mut counts = vec![0usize; lw * lh];
    for ((y, x), &v) in grid.indexed_iter() {
        let cx = x * lw / w;
        let cy = y * lh / h;
        sums[cy * lw + cx] += v;
        counts[cy * lw + cx] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect()
}

/// Equilibrium of the chain whose transition weights from `i` are
/// `weight(i, j)`, by power iteration from the uniform distribution.
fn equilibrium(n: usize, weights: &[f64], tolerance: f64, max_iterations: usize) -> Vec<f64> {
    // Row-normalise into transition probabilities.
    let mut p = weights.to_vec();
    for row in p.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in p.chunks(n).enumerate() {
            let m = pi[i];
            for (nj, &pij) in next.iter_mut().zip(row) {
                *nj += m * pij;
            }
        }
        let residual: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if residual < tolerance {
            break;
        }
    }
    pi
}

pub fn graph_saliency(frame: &RgbdFrame, use_depth: bool, cfg: &GraphSaliencyConfig) -> SaliencyMap {
    let dims = frame.dims();
    let cell = cfg.cell.max(1);
    let (lw, lh) = ((dims.width / cell).max(1), (dims.height / cell).max(1));
    let n = lw * lh;
    let sigma = cfg.falloff_fraction * lw as f64;
    let falloff: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let dx = (i % lw) as f64 - (j % lw) as f64;
            let dy = (i / lw) as f64 - (j / lw) as f64;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    // Lattice cells near the border have fewer neighbours; the second chain's
    // equilibrium is proportional to that neighbourhood mass, so it is
    // divided out.
    let degree: Vec<f64> = falloff.chunks(n).map(|row| row.iter().sum()).collect();

    let mut total = vec![0.0; n];
    let mut weights = vec![0.0; n * n];
    for channel in feature_channels(frame, use_depth) {
        let f = to_lattice(&channel, lw, lh);
        for (k, w) in weights.iter_mut().enumerate() {
            *w = (f[k / n] - f[k % n]).abs() * falloff[k] + cfg.epsilon;
        }
        let activation = equilibrium(n, &weights, cfg.tolerance, cfg.max_iterations);
        for (k, w) in weights.iter_mut().enumerate() {
            *w = activation[k % n] * falloff[k] + cfg.epsilon;
        }
        let normalized = equilibrium(n, &weights, cfg.tolerance, cfg.max_iterations);
        for ((t, v), d) in total.iter_mut().zip(normalized).zip(&degree) {
            *t += v / d;
        }
    }
    let coarse = Grid::from_shape_vec((lh, lw), total).expect("lattice shape");
    let full = resample_bilinear(&coarse, Dims::new(dims.width, dims.height));
    SaliencyMap::max_normalized(full).unwrap_or_else(|| SaliencyMap::uniform(dims))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_of_symmetric_uniform_chain_is_uniform() {
        let n = 5;
        let pi = equilibrium(n, &vec![1.0; n * n], 1e-12, 100);
        assert!(pi.iter().all(|v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn lattice_block_means() {
        let g = Grid::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64);
        assert_eq!(to_lattice(&g, 2, 2), vec![2.5, 4.5, 10.5, 12.5]);
    }
}
