//! The candidate-transition baseline: features for source → destination
//! candidate pairs, a linear SVM scoring them, and the aggregation of the
//! confidences into per-frame saliency maps.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{extract_candidates, Candidate, CandidateConfig, CandidateSet};
use crate::dataset::{Annotation, FixationRecord, VideoSequence};
use crate::fixation::{densify, FixationSet, DEFAULT_SIGMA_FRACTION};
use crate::flow::{motion_features, optical_flow, FlowConfig, FlowField, MotionConfig, MotionFeatures};
use crate::grid::{disk_mean, Dims, Grid, Point};
use crate::maps::{ProbabilityMap, SaliencyMap};
use crate::saliency::StaticSaliency;

#[derive(Debug, Error, PartialEq)]
pub enum TransitionError {
    #[error("ground truth missing for frame {0}")]
    MissingGroundTruth(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("feature vector {0} has a non-finite entry")]
    NonFiniteFeature(usize),
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("the source set is empty")]
    EmptySourceSet,
    #[error("the destination set is empty")]
    EmptyDestinationSet,
    #[error("model file: {0}")]
    Format(String),
}

/// Length of a transition feature vector:
/// src saliency, dst saliency, dst DoG u/v/magnitude means, src and dst
/// face/body/center flags, src–dst distance, dst–center distance and the
/// signed depth difference.
pub const FEATURE_DIM: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionFeatures(pub [f64; FEATURE_DIM]);

impl TransitionFeatures {
    pub const SRC_SALIENCY: usize = 0;
    pub const DST_SALIENCY: usize = 1;
    pub const DOG: usize = 2;
    pub const SRC_LABELS: usize = 5;
    pub const DST_LABELS: usize = 8;
    pub const DISTANCE: usize = 11;
    pub const CENTER_DISTANCE: usize = 12;
    pub const DEPTH_DIFFERENCE: usize = 13;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Features of the transition `src → dst`. Neighbourhood statistics are
/// means over the disk of one candidate σ. Without depth the depth
/// difference is 0.
pub fn build_features(
    src: &Candidate,
    dst: &Candidate,
    src_map: &Grid,
    dst_map: &Grid,
    motion: &MotionFeatures,
    use_depth: bool,
) -> TransitionFeatures {
    let dims = Dims::of(dst_map);
    let mut f = [0.0; FEATURE_DIM];
    f[0] = disk_mean(src_map, src.center, src.sigma);
    f[1] = disk_mean(dst_map, dst.center, dst.sigma);
    f[2] = disk_mean(&motion.dog_u, dst.center, dst.sigma);
    f[3] = disk_mean(&motion.dog_v, dst.center, dst.sigma);
    f[4] = disk_mean(&motion.dog_mag, dst.center, dst.sigma);
    f[5..8].copy_from_slice(&src.labels.one_hot());
    f[8..11].copy_from_slice(&dst.labels.one_hot());
    f[11] = src.center.distance(dst.center);
    f[12] = dst.center.distance(dims.center());
    f[13] = if use_depth { dst.mean_depth - src.mean_depth } else { 0.0 };
    TransitionFeatures(f)
}

/// Positive iff both endpoints sit where the ground truth reaches
/// `threshold_fraction` of its maximum (nearest-pixel lookup).
pub fn label_transition(src: Point, dst: Point, gt_prev: &ProbabilityMap, gt_dst: &ProbabilityMap, threshold_fraction: f64) -> bool {
    let at = |m: &ProbabilityMap, p: Point| {
        let (x, y) = m.dims().pixel(p);
        m.grid()[[y, x]]
    };
    at(gt_dst, dst) >= threshold_fraction * gt_dst.max() && at(gt_prev, src) >= threshold_fraction * gt_prev.max()
}

pub fn label_transitions(
    pairs: &[(Point, Point)],
    gt_prev: Option<&ProbabilityMap>,
    gt_dst: Option<&ProbabilityMap>,
    threshold_fraction: f64,
    dst_frame: usize,
) -> Result<Vec<bool>, TransitionError> {
    let gt_dst = gt_dst.ok_or(TransitionError::MissingGroundTruth(dst_frame))?;
    let gt_prev = gt_prev.ok_or(TransitionError::MissingGroundTruth(dst_frame.saturating_sub(1)))?;
    Ok(pairs
        .iter()
        .map(|&(s, d)| label_transition(s, d, gt_prev, gt_dst, threshold_fraction))
        .collect())
}

// ------------------------------------------------------------------- SVM

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c_reg: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Weight each class's hinge terms by n / (2 · class size), so a rare
    /// positive class is not traded away for the bias.
    pub balanced: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_reg: 1.0,
            epochs: 200,
            seed: 0,
            balanced: true,
        }
    }
}

/// Linear classifier over z-normalised features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LinearSvmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.normalize(x);
        dot(&self.weights, &z) + self.bias
    }

    /// Signed distance from the separating hyperplane in normalised
    /// feature space.
    pub fn confidence(&self, x: &[f64]) -> f64 {
        let norm = dot(&self.weights, &self.weights).sqrt();
        let d = self.decision(x);
        if norm > 0.0 {
            d / norm
        } else {
            d
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) >= 0.0
    }

    /// ½‖w‖² + C · mean weighted hinge loss over the (raw) training set.
    pub fn objective(&self, features: &[Vec<f64>], labels: &[bool], cfg: &SvmConfig) -> f64 {
        let z: Vec<Vec<f64>> = features.iter().map(|x| self.normalize(x)).collect();
        primal_objective(&self.weights, self.bias, &z, labels, cfg.c_reg, class_weights(labels, cfg.balanced))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sign(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

/// Hinge weights of the (positive, negative) class.
pub fn class_weights(labels: &[bool], balanced: bool) -> (f64, f64) {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if !balanced || pos == 0.0 || neg == 0.0 {
        return (1.0, 1.0);
    }
    let n = labels.len() as f64;
    (n / (2.0 * pos), n / (2.0 * neg))
}

/// ½‖w‖² + C · mean weighted hinge loss on already normalised features.
pub fn primal_objective(w: &[f64], b: f64, z: &[Vec<f64>], labels: &[bool], c_reg: f64, class_w: (f64, f64)) -> f64 {
    let hinge: f64 = z
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let cw = if y { class_w.0 } else { class_w.1 };
            cw * (1.0 - sign(y) * (dot(w, x) + b)).max(0.0)
        })
        .sum();
    0.5 * dot(w, w) + c_reg * hinge / z.len() as f64
}

/// Soft-margin linear SVM by stochastic subgradient descent (step 1/(λt),
/// λ = 1/C) with a seeded sample order. The best of the epoch-end iterate
/// and the epoch-averaged iterate, by primal objective, is returned.
pub fn train_svm(features: &[Vec<f64>], labels: &[bool], cfg: &SvmConfig) -> Result<LinearSvmModel, TransitionError> {
    if features.is_empty() {
        return Err(TransitionError::EmptyTrainingSet);
    }
    let dim = features[0].len();
    for (i, x) in features.iter().enumerate() {
        if x.len() != dim {
            return Err(TransitionError::DimensionMismatch {
                expected: dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TransitionError::NonFiniteFeature(i));
        }
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(TransitionError::SingleClass);
    }
    let n = features.len() as f64;
    let means: Vec<f64> = (0..dim)
        .map(|j| features.iter().map(|x| x[j]).sum::<f64>() / n)
        .collect();
    let stds: Vec<f64> = (0..dim)
        .map(|j| {
            let var = features.iter().map(|x| (x[j] - means[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|x| x.iter().zip(means.iter().zip(&stds)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();

    let class_w = class_weights(labels, cfg.balanced);
    let lambda = 1.0 / cfg.c_reg;
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..z.len()).collect();
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let mut best = (primal_objective(&w, b, &z, labels, cfg.c_reg, class_w), w.clone(), b);
    let mut t = 0usize;
    for _ in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        let (mut avg_w, mut avg_b) = (vec![0.0; dim], 0.0);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = sign(labels[i]);
            let margin = y * (dot(&w, &z[i]) + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                let step = eta * y * if labels[i] { class_w.0 } else { class_w.1 };
                for (wj, xj) in w.iter_mut().zip(&z[i]) {
                    *wj += step * xj;
                }
                b += step;
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
            for (a, v) in avg_w.iter_mut().zip(&w) {
                *a += v;
            }
            avg_b += b;
        }
        let m = order.len() as f64;
        avg_w.iter_mut().for_each(|v| *v /= m);
        avg_b /= m;
        for (cw, cb) in [(&w, b), (&avg_w, avg_b)] {
            let obj = primal_objective(cw, cb, &z, labels, cfg.c_reg, class_w);
            if obj < best.0 {
                best = (obj, cw.clone(), cb);
            }
        }
    }
    Ok(LinearSvmModel {
        weights: best.1,
        bias: best.2,
        means,
        stds,
    })
}

const SVM_MAGIC: &[u8; 4] = b"DGSV";
const SVM_VERSION: u32 = 1;

/// "DGSV", version, dim, 4 reserved bytes, then weights, bias, means and
/// stds as f64 LE.
pub fn write_svm(path: &Path, model: &LinearSvmModel) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SVM_MAGIC);
    buf.extend_from_slice(&SVM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    let values = model
        .weights
        .iter()
        .chain(std::iter::once(&model.bias))
        .chain(&model.means)
        .chain(&model.stds);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(&buf)
}

pub fn read_svm(path: &Path) -> Result<LinearSvmModel, TransitionError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| TransitionError::Format(format!("{}: {e}", path.display())))?;
    if buf.len() < 16 || &buf[..4] != SVM_MAGIC {
        return Err(TransitionError::Format(format!("{}: not an SVM model", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != SVM_VERSION {
        return Err(TransitionError::Format(format!("unsupported version {}", word(4))));
    }
    let dim = word(8) as usize;
    if buf.len() != 16 + 8 * (3 * dim + 1) {
        return Err(TransitionError::Format(format!("{}: truncated", path.display())));
    }
    let v: Vec<f64> = buf[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(LinearSvmModel {
        weights: v[..dim].to_vec(),
        bias: v[dim],
        means: v[dim + 1..2 * dim + 1].to_vec(),
        stds: v[2 * dim + 1..].to_vec(),
    })
}

// ------------------------------------------------------ aggregation

/// P(d) = (1/|N_S|) Σ_s S(s) · max(C(s,d), 0) over `(S(s), C(s,d))` pairs.
pub fn destination_probability(sources: &[(f64, f64)]) -> Result<f64, TransitionError> {
    if sources.is_empty() {
        return Err(TransitionError::EmptySourceSet);
    }
    let sum: f64 = sources.iter().map(|&(s, c)| s * c.max(0.0)).sum();
    Ok(sum / sources.len() as f64)
}

/// S(p) = (1/|N_D|) Σ_d P(d) · exp(−‖p − d‖² / 2σ²).
pub fn render_saliency(dests: &[(Point, f64)], sigma: f64, dims: Dims) -> Result<SaliencyMap, TransitionError> {
    if dests.is_empty() {
        return Err(TransitionError::EmptyDestinationSet);
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut grid = Grid::zeros(dims.shape());
    let mut gx = vec![0.0; dims.width];
    let mut gy = vec![0.0; dims.height];
    for &(d, p) in dests {
        for (x, g) in gx.iter_mut().enumerate() {
            *g = (-(x as f64 - d.x).powi(2) * inv).exp();
        }
        for (y, g) in gy.iter_mut().enumerate() {
            *g = (-(y as f64 - d.y).powi(2) * inv).exp();
        }
        for ((y, x), v) in grid.indexed_iter_mut() {
            *v += p * gy[y] * gx[x];
        }
    }
    let n = dests.len() as f64;
    grid.mapv_inplace(|v| v / n);
    Ok(SaliencyMap::raw(grid))
}

// --------------------------------------------------------- pipeline

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub interval: usize,
    pub threshold_fraction: f64,
    /// Rendering σ as a fraction of the frame diagonal.
    pub render_sigma_fraction: f64,
    /// Ground-truth densification σ as a fraction of the frame diagonal.
    pub gt_sigma_fraction: f64,
    pub flow: FlowConfig,
    pub motion: MotionConfig,
    pub candidates: CandidateConfig,
    pub svm: SvmConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            interval: 10,
            threshold_fraction: 0.5,
            render_sigma_fraction: 0.05,
            gt_sigma_fraction: DEFAULT_SIGMA_FRACTION,
            flow: FlowConfig::default(),
            motion: MotionConfig::default(),
            candidates: CandidateConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

/// Everything the baseline derives from one step frame.
#[derive(Clone, Debug)]
pub struct StepData {
    pub frame: usize,
    pub static_map: Grid,
    pub motion: MotionFeatures,
    pub candidates: CandidateSet,
}

pub fn step_frames(len: usize, interval: usize) -> Vec<usize> {
    (0..len).step_by(interval.max(1)).collect()
}

/// Static maps, motion features and candidates at every step frame. The
/// flow at step `t` runs from frame `t − interval` to `t` (zero at the
/// first step).
pub fn analyze_steps(
    video: &VideoSequence,
    annotations: &[Annotation],
    provider: &dyn StaticSaliency,
    cfg: &BaselineConfig,
    use_depth: bool,
) -> Vec<StepData> {
    let steps = step_frames(video.len(), cfg.interval);
    let dims = video.dims;
    let flows: Vec<FlowField> = steps
        .par_iter()
        .map(|&t| {
            if t == 0 {
                FlowField::zeros(dims, if use_depth { 4 } else { 3 })
            } else {
                optical_flow(&video.frames[t - cfg.interval], &video.frames[t], use_depth, &cfg.flow)
                    .expect("frames of one video share dimensions")
            }
        })
        .collect();
    steps
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let frame = &video.frames[t];
            let static_map = provider.saliency(frame);
            let prev = if k == 0 { &flows[0] } else { &flows[k - 1] };
            let motion = motion_features(prev, &flows[k], &cfg.motion).expect("same dimensions");
            let candidates = extract_candidates(t, &static_map, &motion, annotations, &frame.depth, &cfg.candidates);
            StepData {
                frame: t,
                static_map: static_map.to_max_normalized_or_zero(),
                motion,
                candidates,
            }
        })
        .collect()
}

/// Source candidates of each step with their maps: the previous step's
/// candidates, or the current center candidate at the first step.
fn sources_of<'a>(steps: &'a [StepData], k: usize) -> (Vec<&'a Candidate>, &'a Grid) {
    if k == 0 {
        (vec![steps[0].candidates.center_candidate()], &steps[0].static_map)
    } else {
        (steps[k - 1].candidates.candidates.iter().collect(), &steps[k - 1].static_map)
    }
}

/// Feature vectors and labels of every candidate pair of one video.
pub fn training_pairs(
    steps: &[StepData],
    fixations: &[FixationRecord],
    dims: Dims,
    cfg: &BaselineConfig,
    use_depth: bool,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let gt = |frame: usize| densify(&FixationSet::from_records(fixations, frame, dims), dims, cfg.gt_sigma_fraction).ok();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for k in 0..steps.len() {
        let (sources, src_map) = sources_of(steps, k);
        let prev_frame = if k == 0 { steps[0].frame } else { steps[k - 1].frame };
        let (Some(gt_prev), Some(gt_dst)) = (gt(prev_frame), gt(steps[k].frame)) else {
            continue;
        };
        for src in &sources {
            for dst in &steps[k].candidates.candidates {
                let f = build_features(src, dst, src_map, &steps[k].static_map, &steps[k].motion, use_depth);
                features.push(f.0.to_vec());
                labels.push(label_transition(src.center, dst.center, &gt_prev, &gt_dst, cfg.threshold_fraction));
            }
        }
    }
    (features, labels)
}

/// Training input of one video.
pub struct TrainingVideo<'a> {
    pub video: &'a VideoSequence,
    pub fixations: &'a [FixationRecord],
    pub annotations: &'a [Annotation],
}

pub fn train_baseline(
    videos: &[TrainingVideo<'_>],
    provider: &dyn StaticSaliency,
    cfg: &BaselineConfig,
    use_depth: bool,
) -> Result<LinearSvmModel, TransitionError> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for v in videos {
        let steps = analyze_steps(v.video, v.annotations, provider, cfg, use_depth);
        let (f, l) = training_pairs(&steps, v.fixations, v.video.dims, cfg, use_depth);
        features.extend(f);
        labels.extend(l);
    }
    train_svm(&features, &labels, &cfg.svm)
}

/// Per-frame maps from the recursion over step frames. The first step's
/// single source is the center candidate with S = 1; afterwards the
/// sources are the previous step's destinations with S = P / max P. When no
/// destination receives a positive probability (every transition scored
/// negative, or every source saliency is 0) the step is recomputed with every
/// candidate of the source frame as a source with S = 1.
pub fn run_steps(steps: &[StepData], model: &LinearSvmModel, dims: Dims, cfg: &BaselineConfig, use_depth: bool) -> Vec<SaliencyMap> {
    let sigma = cfg.render_sigma_fraction * dims.diagonal();
    let mut saliency: Vec<f64> = vec![1.0];
    let mut out = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let (sources, src_map) = sources_of(steps, k);
        let mut p = step_probabilities(&sources, &saliency, src_map, &steps[k], model, use_depth);
        if p.iter().all(|&v| v <= 0.0) {
            let fallback = if k == 0 { &steps[0] } else { &steps[k - 1] };
            let all: Vec<&Candidate> = fallback.candidates.candidates.iter().collect();
            p = step_probabilities(&all, &vec![1.0; all.len()], &fallback.static_map, &steps[k], model, use_depth);
        }
        let dests = &steps[k].candidates.candidates;
        let rendered: Vec<(Point, f64)> = dests.iter().zip(&p).map(|(d, &pd)| (d.center, pd)).collect();
        out.push(render_saliency(&rendered, sigma, dims).expect("destinations are never empty"));
        let max = p.iter().fold(0.0f64, |m, &v| m.max(v));
        saliency = p.iter().map(|&v| if max > 0.0 { v / max } else { 0.0 }).collect();
    }
    out
}

/// P(d) for every destination of `step`: the saliency-weighted mean of the
/// non-negative confidences over the sources.
fn step_probabilities(
    sources: &[&Candidate],
    saliency: &[f64],
    src_map: &Grid,
    step: &StepData,
    model: &LinearSvmModel,
    use_depth: bool,
) -> Vec<f64> {
    step.candidates
        .candidates
        .par_iter()
        .map(|dst| {
            let pairs: Vec<(f64, f64)> = sources
                .iter()
                .zip(saliency)
                .map(|(src, &s)| {
                    let f = build_features(src, dst, src_map, &step.static_map, &step.motion, use_depth);
                    (s, model.confidence(f.as_slice()))
                })
                .collect();
            destination_probability(&pairs).expect("sources are never empty")
        })
        .collect()
}

/// Spreads per-step maps over all frames: each frame gets the map of the
/// latest step at or before it.
pub fn expand_steps<T: Clone>(step_maps: &[T], len: usize, interval: usize) -> Vec<T> {
    (0..len).map(|f| step_maps[f / interval.max(1)].clone()).collect()
}

pub fn run_baseline(
    video: &VideoSequence,
    annotations: &[Annotation],
    model: &LinearSvmModel,
    provider: &dyn StaticSaliency,
    cfg: &BaselineConfig,
    use_depth: bool,
) -> Vec<SaliencyMap> {
    if video.is_empty() {
        return Vec::new();
    }
    let steps = analyze_steps(video, annotations, provider, cfg, use_depth);
    let maps = run_steps(&steps, model, video.dims, cfg, use_depth);
    expand_steps(&maps, video.len(), cfg.interval)
}
