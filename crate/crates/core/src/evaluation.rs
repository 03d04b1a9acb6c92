//! Scoring of predicted saliency against fixations, method comparison over
//! the test split, and the `report.csv` format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixation::{densify, densify_points, frame_rng, frame_splits, FixationSet};
use crate::grid::{resample_bilinear, Dims, Grid, Point};
use crate::maps::{center_prior, ProbabilityMap, SaliencyMap};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Dims, Dims),
    #[error("no fixations to score against")]
    NoFixations,
    #[error("missing predictions: {0}")]
    MissingPredictions(String),
    #[error("{path}: {reason}")]
    BadPrediction { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

type Result<T, E = EvalError> = std::result::Result<T, E>;

/// ½ Σ (a−b)² / (a+b); 0 for equal maps, 1 for disjoint supports.
pub fn chi2_distance(a: &ProbabilityMap, b: &ProbabilityMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(EvalError::ShapeMismatch(a.dims(), b.dims()));
    }
    let renorm = |g: &Grid| {
        let s = g.sum();
        if (s - 1.0).abs() > 1e-6 && s > 0.0 {
            1.0 / s
        } else {
            1.0
        }
    };
    let (ka, kb) = (renorm(a.grid()), renorm(b.grid()));
    let mut total = 0.0;
    for (&x, &y) in a.grid().iter().zip(b.grid().iter()) {
        let (x, y) = (x * ka, y * kb);
        let s = x + y;
        if s > 0.0 {
            total += (x - y) * (x - y) / s;
        }
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auc_from_scores(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with mid-ranks for tied groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += mid_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

pub const DEFAULT_NEGATIVES_PER_POSITIVE: usize = 10;

/// AUC of the saliency values at fixated pixels against values at
/// uniformly sampled pixels.
pub fn auc_score(sal: &Grid, fixations: &[Point], n_neg_per_pos: usize, rng: &mut impl Rng) -> Result<f64> {
    if fixations.is_empty() {
        return Err(EvalError::NoFixations);
    }
    let dims = Dims::of(sal);
    let positives: Vec<f64> = fixations
        .iter()
        .map(|&p| {
            let (x, y) = dims.pixel(p);
            sal[[y, x]]
        })
        .collect();
    let negatives: Vec<f64> = (0..positives.len() * n_neg_per_pos.max(1))
        .map(|_| {
            let x = rng.random_range(0..dims.width);
            let y = rng.random_range(0..dims.height);
            sal[[y, x]]
        })
        .collect();
    Ok(auc_from_scores(&positives, &negatives))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Auc,
    OneMinusChi2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::OneMinusChi2 => "1-chi2",
        }
    }

    /// Accepts `auc`, `chi2` and `1-chi2`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "auc" => Some(Metric::Auc),
            "chi2" | "1-chi2" => Some(Metric::OneMinusChi2),
            _ => None,
        }
    }
}

/// Something that yields a saliency map for a (video, frame).
pub trait MapSource: Sync {
    fn name(&self) -> &str;
    fn map(&self, video: &str, frame: usize, dims: Dims) -> Result<Grid>;
}

pub struct CenterPrior;

impl MapSource for CenterPrior {
    fn name(&self) -> &str {
        "center"
    }
    fn map(&self, _: &str, _: usize, dims: Dims) -> Result<Grid> {
        Ok(center_prior(dims).into_grid())
    }
}

pub struct UniformMap;

impl MapSource for UniformMap {
    fn name(&self) -> &str {
        "uniform"
    }
    fn map(&self, _: &str, _: usize, dims: Dims) -> Result<Grid> {
        Ok(SaliencyMap::uniform(dims).into_grid())
    }
}

/// Maps held in memory, keyed by video id, one per frame.
pub struct InMemory {
    pub name: String,
    pub maps: BTreeMap<String, Vec<Grid>>,
}

impl MapSource for InMemory {
    fn name(&self) -> &str {
        &self.name
    }
    fn map(&self, video: &str, frame: usize, dims: Dims) -> Result<Grid> {
        let g = self
            .maps
            .get(video)
            .and_then(|v| v.get(frame))
            .ok_or_else(|| EvalError::MissingPredictions(format!("{}: {video} frame {frame}", self.name)))?;
        Ok(resample_bilinear(g, dims))
    }
}

/// A prediction directory `DIR/<video>/%06d.png`.
pub struct PredictionDir {
    pub name: String,
    pub root: PathBuf,
}

impl PredictionDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| root.display().to_string());
        Self { name, root }
    }
}

impl MapSource for PredictionDir {
    fn name(&self) -> &str {
        &self.name
    }
    fn map(&self, video: &str, frame: usize, dims: Dims) -> Result<Grid> {
        let path = self.root.join(video).join(crate::dataset::frame_name(frame));
        if !path.is_file() {
            return Err(EvalError::MissingPredictions(path.display().to_string()));
        }
        Ok(resample_bilinear(&read_map_png(&path)?, dims))
    }
}

/// Reads an 8-bit grayscale map into [0,1].
pub fn read_map_png(path: &Path) -> Result<Grid> {
    let img = image::open(path)
        .map_err(|e| EvalError::BadPrediction {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

/// Writes a map as 8-bit grayscale with its maximum at 255.
pub fn write_map_png(path: &Path, grid: &Grid) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let max = grid.fold(0.0f64, |m, &v| if v.is_finite() { m.max(v) } else { m });
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let (h, w) = grid.dim();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = grid[[y as usize, x as usize]];
        let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
        Luma([(v * scale).round().clamp(0.0, 255.0) as u8])
    });
    img.save(path).map_err(|e| EvalError::BadPrediction {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Ground truth of one test video.
#[derive(Clone, Debug)]
pub struct EvalVideo {
    pub id: String,
    pub dims: Dims,
    /// One set per frame.
    pub fixations: Vec<FixationSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub method: String,
    pub video: String,
    pub frame: usize,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<FrameScore>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    pub n_neg_per_pos: usize,
    pub sigma_fraction: f64,
    /// Splits for the ground-truth upper bound row.
    pub num_splits: usize,
    pub upper_bound: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_neg_per_pos: DEFAULT_NEGATIVES_PER_POSITIVE,
            sigma_fraction: crate::fixation::DEFAULT_SIGMA_FRACTION,
            num_splits: 10,
            upper_bound: true,
        }
    }
}

pub const UPPER_BOUND_NAME: &str = "gt-upper-bound";

fn frame_seed_stream(video_ordinal: usize, frame: usize) -> u64 {
    ((video_ordinal as u64) << 32) | frame as u64
}

fn score_map(sal: &Grid, fix: &FixationSet, gt: &ProbabilityMap, metrics: &[Metric], cfg: &EvalConfig, stream: u64) -> Vec<(Metric, f64)> {
    let points: Vec<Point> = fix.points().collect();
    metrics
        .iter()
        .map(|&m| {
            let v = match m {
                Metric::Auc => {
                    let mut rng = frame_rng(cfg.seed, stream);
                    auc_score(sal, &points, cfg.n_neg_per_pos, &mut rng).expect("frame has fixations")
                }
                Metric::OneMinusChi2 => {
                    let p = SaliencyMap::raw(sal.clone()).to_probability();
                    1.0 - chi2_distance(&p, gt).expect("same dims")
                }
            };
            (m, v)
        })
        .collect()
}

/// Split-half agreement of the viewers: 1−χ² between halves (the
/// homogeneity score) and AUC of one half's map against the other half's
/// fixations, averaged over the splits.
fn upper_bound(fix: &FixationSet, dims: Dims, metrics: &[Metric], cfg: &EvalConfig, stream: u64) -> Vec<(Metric, f64)> {
    let mut rng = frame_rng(cfg.seed, stream);
    let splits = frame_splits(fix.viewer_count(), cfg.num_splits.max(1), &mut rng);
    let mut chi = 0.0;
    let mut auc = 0.0;
    for mask in &splits {
        let half = |keep: bool| -> Vec<Point> {
            fix.viewers
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m == keep)
                .flat_map(|(v, _)| v.iter().copied())
                .collect()
        };
        let (a, b) = (half(true), half(false));
        let ma = densify_points(&a, dims, cfg.sigma_fraction).expect("non-empty");
        let mb = densify_points(&b, dims, cfg.sigma_fraction).expect("non-empty");
        chi += chi2_distance(&ma, &mb).expect("same dims");
        auc += auc_score(ma.grid(), &b, cfg.n_neg_per_pos, &mut rng).expect("non-empty");
    }
    let n = splits.len() as f64;
    metrics
        .iter()
        .map(|&m| match m {
            Metric::Auc => (m, auc / n),
            Metric::OneMinusChi2 => (m, 1.0 - chi / n),
        })
        .collect()
}

/// Scores every method on every frame with at least one fixation.
pub fn evaluate_split(methods: &[&dyn MapSource], videos: &[EvalVideo], metrics: &[Metric], cfg: &EvalConfig) -> Result<MetricReport> {
    let mut rows = Vec::new();
    for (ordinal, video) in videos.iter().enumerate() {
        let frames: Vec<usize> = (0..video.fixations.len())
            .filter(|&f| !video.fixations[f].is_empty())
            .collect();
        let per_frame: Vec<Vec<FrameScore>> = frames
            .par_iter()
            .map(|&f| -> Result<Vec<FrameScore>> {
                let fix = &video.fixations[f];
                let gt = densify(fix, video.dims, cfg.sigma_fraction).expect("non-empty");
                let stream = frame_seed_stream(ordinal, f);
                let mut out = Vec::new();
                for method in methods {
                    let sal = method.map(&video.id, f, video.dims)?;
                    for (metric, value) in score_map(&sal, fix, &gt, metrics, cfg, stream) {
                        out.push(FrameScore {
                            method: method.name().to_string(),
                            video: video.id.clone(),
                            frame: f,
                            metric,
                            value,
                        });
                    }
                }
                if cfg.upper_bound && fix.viewer_count() >= 2 {
                    for (metric, value) in upper_bound(fix, video.dims, metrics, cfg, stream) {
                        out.push(FrameScore {
                            method: UPPER_BOUND_NAME.to_string(),
                            video: video.id.clone(),
                            frame: f,
                            metric,
                            value,
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        rows.extend(per_frame.into_iter().flatten());
    }
    Ok(MetricReport { rows })
}

impl MetricReport {
    /// Mean and population standard deviation per (method, metric), in
    /// order of first appearance of the method.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<(String, Metric)> = Vec::new();
        let mut values: BTreeMap<(String, Metric), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.metric);
            if !values.contains_key(&key) {
                order.push(key.clone());
            }
            values.entry(key).or_default().push(r.value);
        }
        order.sort_by_key(|(m, metric)| (order_index(&self.rows, m), *metric));
        order
            .into_iter()
            .map(|key| {
                let v = &values[&key];
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                Aggregate {
                    method: key.0,
                    metric: key.1,
                    mean,
                    std: var.sqrt(),
                    count: v.len(),
                }
            })
            .collect()
    }

    pub fn aggregate(&self, method: &str, metric: Metric) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,video,frame,metric,value\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.method, r.video, r.frame, r.metric.name(), r.value).unwrap();
        }
        out.push_str("\nmethod,metric,mean,std\n");
        for a in self.aggregates() {
            writeln!(out, "{},{},{},{}", a.method, a.metric.name(), a.mean, a.std).unwrap();
        }
        out
    }
}

fn order_index(rows: &[FrameScore], method: &str) -> usize {
    rows.iter().position(|r| r.method == method).unwrap_or(usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_rank_auc_handles_ties() {
        assert_eq!(auc_from_scores(&[1.0], &[1.0, 1.0]), 0.5);
        assert_eq!(auc_from_scores(&[2.0, 3.0], &[1.0]), 1.0);
        assert_eq!(auc_from_scores(&[0.0], &[1.0]), 0.0);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::Auc, Metric::OneMinusChi2] {
            assert_eq!(Metric::parse(m.name()), Some(m));
        }
        assert_eq!(Metric::parse("chi2"), Some(Metric::OneMinusChi2));
        assert_eq!(Metric::parse("nss"), None);
    }

    #[test]
    fn aggregates_use_population_std() {
        let row = |v| FrameScore {
            method: "m".into(),
            video: "a".into(),
            frame: 0,
            metric: Metric::Auc,
            value: v,
        };
        let r = MetricReport {
            rows: vec![row(1.0), row(3.0)],
        };
        let a = r.aggregate("m", Metric::Auc).unwrap();
        assert_eq!((a.mean, a.std, a.count), (2.0, 1.0, 2));
    }
}
