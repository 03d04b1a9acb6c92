//! Fixation ground truth: densified probability maps and the split-half
//! homogeneity score.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FixationRecord;
use crate::evaluation::chi2_distance;
use crate::grid::{Dims, Grid, Point};
use crate::maps::ProbabilityMap;

pub const DEFAULT_SIGMA_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum FixationError {
    #[error("no fixations to densify")]
    EmptyFixationSet,
    #[error("homogeneity needs at least 2 viewers, got {0}")]
    TooFewViewers(usize),
    #[error("no frame has fixations from 2 or more viewers")]
    NoScorableFrames,
    #[error("number of splits must be at least 1")]
    ZeroSplits,
}

/// Fixations of one frame, one list per viewer, in working pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixationSet {
    pub viewers: Vec<Vec<Point>>,
}

impl FixationSet {
    pub fn new(viewers: Vec<Vec<Point>>) -> Self {
        Self {
            viewers: viewers.into_iter().filter(|v| !v.is_empty()).collect(),
        }
    }

    /// Groups the records of `frame` by viewer (sorted by viewer id).
    pub fn from_records(records: &[FixationRecord], frame: usize, dims: Dims) -> Self {
        let grouped = crate::dataset::frame_fixations(records, frame, dims);
        Self::new(grouped.into_iter().map(|(_, pts)| pts).collect())
    }

    /// Per-frame sets for a video of `frames` frames.
    pub fn per_frame(records: &[FixationRecord], frames: usize, dims: Dims) -> Vec<Self> {
        (0..frames)
            .map(|f| Self::from_records(records, f, dims))
            .collect()
    }

    pub fn viewer_count(&self) -> usize {
        self.viewers.len()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.viewers.iter().flatten().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.viewers.iter().all(|v| v.is_empty())
    }

    fn subset(&self, members: &[bool], keep: bool) -> Vec<Point> {
        self.viewers
            .iter()
            .zip(members)
            .filter(|(_, &m)| m == keep)
            .flat_map(|(v, _)| v.iter().copied())
            .collect()
    }
}

/// Sum of isotropic Gaussians (σ = `sigma_fraction` × diagonal) at the
/// given points, restricted to the raster and normalised to sum 1.
pub fn densify_points(points: &[Point], dims: Dims, sigma_fraction: f64) -> Result<ProbabilityMap, FixationError> {
    if points.is_empty() {
        return Err(FixationError::EmptyFixationSet);
    }
    let sigma = sigma_fraction * dims.diagonal();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut grid = Grid::zeros(dims.shape());
    // Separable: each Gaussian is an outer product of two 1-D profiles.
    let mut gx = vec![0.0; dims.width];
    let mut gy = vec![0.0; dims.height];
    for p in points {
        for (x, g) in gx.iter_mut().enumerate() {
            *g = (-(x as f64 - p.x).powi(2) * inv).exp();
        }
        for (y, g) in gy.iter_mut().enumerate() {
            *g = (-(y as f64 - p.y).powi(2) * inv).exp();
        }
        for ((y, x), v) in grid.indexed_iter_mut() {
            *v += gy[y] * gx[x];
        }
    }
    Ok(ProbabilityMap::from_weights(grid).expect("Gaussian mass is positive"))
}

pub fn densify(fixations: &FixationSet, dims: Dims, sigma_fraction: f64) -> Result<ProbabilityMap, FixationError> {
    let points: Vec<Point> = fixations.points().collect();
    densify_points(&points, dims, sigma_fraction)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomogeneityConfig {
    pub num_splits: usize,
    pub rng_seed: u64,
    pub sigma_fraction: f64,
}

impl Default for HomogeneityConfig {
    fn default() -> Self {
        Self {
            num_splits: 10,
            rng_seed: 0,
            sigma_fraction: DEFAULT_SIGMA_FRACTION,
        }
    }
}

/// Random generator for one frame, independent of evaluation order.
pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of distinct ways to split `v` viewers into halves of size ⌊v/2⌋
/// and the remainder (a subset and its complement count once).
pub fn distinct_balanced_splits(v: usize) -> u128 {
    let n = binomial(v, v / 2);
    if v % 2 == 0 {
        n / 2
    } else {
        n
    }
}

/// All balanced splits, each listed once, as membership masks.
fn all_balanced_splits(v: usize) -> Vec<Vec<bool>> {
    let k = v / 2;
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut mask = vec![false; v];
        for &i in &idx {
            mask[i] = true;
        }
        // For even counts keep only the half that contains viewer 0.
        if v % 2 == 1 || mask[0] {
            out.push(mask);
        }
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + v - k) else {
            break;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

fn canonical(mut mask: Vec<bool>) -> Vec<bool> {
    if mask.len() % 2 == 0 && !mask[0] {
        mask.iter_mut().for_each(|m| *m = !*m);
    }
    mask
}

fn split_chi2(set: &FixationSet, mask: &[bool], dims: Dims, sigma_fraction: f64) -> f64 {
    let a = densify_points(&set.subset(mask, true), dims, sigma_fraction).expect("non-empty half");
    let b = densify_points(&set.subset(mask, false), dims, sigma_fraction).expect("non-empty half");
    chi2_distance(&a, &b).expect("same dims")
}

/// The splits used for one frame: every distinct balanced split when
/// `num_splits` covers them all, otherwise `num_splits` distinct random ones.
pub fn frame_splits(viewers: usize, num_splits: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let total = distinct_balanced_splits(viewers);
    if num_splits as u128 >= total {
        return all_balanced_splits(viewers);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(num_splits);
    while out.len() < num_splits {
        let mut mask = vec![false; viewers];
        for i in sample(rng, viewers, viewers / 2) {
            mask[i] = true;
        }
        let mask = canonical(mask);
        if seen.insert(mask.clone()) {
            out.push(mask);
        }
    }
    out
}

/// Q = 1 − mean χ² between the maps of a random viewer half and of the rest.
pub fn homogeneity_score(
    set: &FixationSet,
    dims: Dims,
    cfg: &HomogeneityConfig,
    frame: usize,
) -> Result<f64, FixationError> {
    let v = set.viewer_count();
    if v < 2 {
        return Err(FixationError::TooFewViewers(v));
    }
    if cfg.num_splits == 0 {
        return Err(FixationError::ZeroSplits);
    }
    let mut rng = frame_rng(cfg.rng_seed, frame as u64);
    let splits = frame_splits(v, cfg.num_splits, &mut rng);
    let total: f64 = splits
        .iter()
        .map(|m| split_chi2(set, m, dims, cfg.sigma_fraction))
        .sum();
    Ok(1.0 - total / splits.len() as f64)
}

/// Average over every distinct balanced split.
pub fn homogeneity_exhaustive(set: &FixationSet, dims: Dims, sigma_fraction: f64) -> Result<f64, FixationError> {
    let v = set.viewer_count();
    if v < 2 {
        return Err(FixationError::TooFewViewers(v));
    }
    let splits = all_balanced_splits(v);
    let total: f64 = splits
        .iter()
        .map(|m| split_chi2(set, m, dims, sigma_fraction))
        .sum();
    Ok(1.0 - total / splits.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoQuality {
    pub mean: f64,
    /// Q per frame; `None` where fewer than 2 viewers looked.
    pub per_frame: Vec<Option<f64>>,
    pub skipped: usize,
}

/// Mean Q over every frame with at least two viewers.
pub fn video_quality(frames: &[FixationSet], dims: Dims, cfg: &HomogeneityConfig) -> Result<VideoQuality, FixationError> {
    if cfg.num_splits == 0 {
        return Err(FixationError::ZeroSplits);
    }
    let per_frame: Vec<Option<f64>> = frames
        .par_iter()
        .enumerate()
        .map(|(i, set)| homogeneity_score(set, dims, cfg, i).ok())
        .collect();
    let scored: Vec<f64> = per_frame.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(FixationError::NoScorableFrames);
    }
    Ok(VideoQuality {
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        skipped: frames.len() - scored.len(),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_enumeration_counts() {
        for v in 2..=9 {
            assert_eq!(all_balanced_splits(v).len() as u128, distinct_balanced_splits(v), "v = {v}");
        }
        assert_eq!(distinct_balanced_splits(4), 3);
        assert_eq!(distinct_balanced_splits(5), 10);
    }

    #[test]
    fn sampled_splits_are_distinct_and_balanced() {
        let mut rng = frame_rng(3, 0);
        let splits = frame_splits(10, 40, &mut rng);
        assert_eq!(splits.len(), 40);
        let unique: HashSet<_> = splits.iter().cloned().collect();
        assert_eq!(unique.len(), 40);
        assert!(splits.iter().all(|m| m.iter().filter(|&&b| b).count() == 5 && m[0]));
    }

    #[test]
    fn densify_center_is_argmax() {
        let dims = Dims::new(128, 96);
        let m = densify_points(&[dims.center()], dims, 0.05).unwrap();
        assert!((m.grid().sum() - 1.0).abs() < 1e-12);
        assert_eq!(crate::grid::argmax(m.grid()), (64, 48));
        assert_eq!(densify_points(&[], dims, 0.05), Err(FixationError::EmptyFixationSet));
    }

    #[test]
    fn quality_averages_scored_frames() {
        let dims = Dims::new(32, 24);
        let p = Point::new(10.0, 10.0);
        let frames = vec![
            FixationSet::new(vec![vec![p], vec![p]]),
            FixationSet::new(vec![vec![p]]),
        ];
        let q = video_quality(&frames, dims, &HomogeneityConfig::default()).unwrap();
        assert_eq!(q.skipped, 1);
        assert!((q.mean - 1.0).abs() < 1e-12);
        assert_eq!(
            video_quality(&frames[1..], dims, &HomogeneityConfig::default()),
            Err(FixationError::NoScorableFrames)
        );
    }
}
