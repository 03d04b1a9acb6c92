//! Sparse per-frame attention candidates: Gaussian blobs fitted to the modes
//! of the static saliency and motion maps, annotation cues, and a frame
//! center candidate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, AnnotationLabel};
use crate::flow::MotionFeatures;
use crate::grid::{disk_mean, sample_bilinear, Dims, Grid, Point};
use crate::maps::SaliencyMap;

#[derive(Debug, Error, PartialEq)]
pub enum CandidateError {
    #[error("map has no structure to cluster (all zero or constant)")]
    DegenerateMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateConfig {
    pub bandwidth: f64,
    pub max_candidates: usize,
    /// Modes below this fraction of the map maximum are dropped.
    pub min_peak_fraction: f64,
    /// Positive DoG magnitude responses below this are treated as no motion.
    pub motion_floor: f64,
    pub max_iterations: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            bandwidth: 8.0,
            max_candidates: 10,
            min_peak_fraction: 0.1,
            motion_floor: 1e-3,
            max_iterations: 200,
        }
    }
}

impl CandidateConfig {
    pub fn merge_radius(&self) -> f64 {
        self.bandwidth / 2.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels {
    pub face: bool,
    pub body: bool,
    pub center: bool,
}

impl Labels {
    pub const CENTER: Labels = Labels {
        face: false,
        body: false,
        center: true,
    };

    pub fn union(self, other: Labels) -> Labels {
        Labels {
            face: self.face || other.face,
            body: self.body || other.body,
            center: self.center || other.center,
        }
    }

    /// Multi-hot `[face, body, center]`.
    pub fn one_hot(self) -> [f64; 3] {
        [self.face as u8 as f64, self.body as u8 as f64, self.center as u8 as f64]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Static,
    Motion,
    Annotation,
    Center,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub center: Point,
    pub sigma: f64,
    /// Amplitude of the cue that produced the candidate, in [0,1].
    pub saliency: f64,
    pub mean_depth: f64,
    pub labels: Labels,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub frame_index: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn center_candidate(&self) -> &Candidate {
        self.candidates
            .iter()
            .find(|c| c.source == Source::Center)
            .expect("every set carries a center candidate")
    }
}

/// Seed coordinates spaced `step` apart and symmetric about the middle of
/// `0..len`.
fn symmetric_seeds(len: usize, step: f64) -> Vec<f64> {
    let span = (len - 1) as f64;
    let n = (span / step).floor() as usize + 1;
    let offset = (span - (n - 1) as f64 * step) / 2.0;
    (0..n).map(|i| offset + i as f64 * step).collect()
}

/// Weighted centroid of the flat disk window; `None` for zero mass.
fn window_centroid(map: &Grid, p: Point, radius: f64) -> Option<(Point, f64)> {
    let dims = Dims::of(map);
    let x0 = (p.x - radius).ceil().max(0.0) as usize;
    let y0 = (p.y - radius).ceil().max(0.0) as usize;
    let x1 = ((p.x + radius).floor().max(0.0) as usize).min(dims.width - 1);
    let y1 = ((p.y + radius).floor().max(0.0) as usize).min(dims.height - 1);
    let r2 = radius * radius;
    let (mut sx, mut sy, mut mass) = (0.0, 0.0, 0.0);
    for y in y0..=y1 {
        let dy = y as f64 - p.y;
        for x in x0..=x1 {
            let dx = x as f64 - p.x;
            if dx * dx + dy * dy <= r2 {
                let w = map[[y, x]];
                sx += w * x as f64;
                sy += w * y as f64;
                mass += w;
            }
        }
    }
    (mass > 0.0).then(|| (Point::new(sx / mass, sy / mass), mass))
}

fn check_map(map: &Grid) -> Result<f64, CandidateError> {
    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > 0.0) || hi == lo {
        return Err(CandidateError::DegenerateMap);
    }
    Ok(hi)
}

/// Modes of the map by flat-kernel mean-shift, strongest first.
pub fn mean_shift_modes(map: &SaliencyMap, cfg: &CandidateConfig) -> Result<Vec<Point>, CandidateError> {
    mean_shift_grid(map.grid(), cfg)
}

pub fn mean_shift_grid(map: &Grid, cfg: &CandidateConfig) -> Result<Vec<Point>, CandidateError> {
    let max = check_map(map)?;
    let dims = Dims::of(map);
    let bw = cfg.bandwidth;
    let mut converged: Vec<(Point, f64)> = Vec::new();
    for &sy in &symmetric_seeds(dims.height, bw / 2.0) {
        for &sx in &symmetric_seeds(dims.width, bw / 2.0) {
            let mut p = Point::new(sx, sy);
            if window_centroid(map, p, bw).is_none() {
                continue;
            }
            for _ in 0..cfg.max_iterations {
                let Some((next, _)) = window_centroid(map, p, bw) else {
                    break;
                };
                let shift = next.distance(p);
                p = next;
                if shift < 0.1 {
                    break;
                }
            }
            let value = sample_bilinear(map, p.x, p.y);
            if value >= cfg.min_peak_fraction * max {
                converged.push((p, value));
            }
        }
    }
    converged.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
    });
    let mut modes: Vec<Point> = Vec::new();
    for (p, _) in converged {
        if modes.iter().all(|m| m.distance(p) >= cfg.merge_radius()) {
            modes.push(p);
        }
    }
    Ok(modes)
}

/// Second radial moment of `g(r) − g(R)` over a disk of radius `R` for an
/// isotropic Gaussian `g` of width `sigma`.
fn clipped_gaussian_moment(sigma: f64, radius: f64) -> f64 {
    let a = 1.0 / (2.0 * sigma * sigma);
    let t = a * radius * radius;
    // m3 / m1 with m1 = P(2, t) / 2a and m3 = P(3, t) / a²
    exp_tail(3, t) / (a * exp_tail(2, t))
}

/// 1 − e^(−t) Σ_{k<n} t^k / k!, summed as a series for small t to avoid
/// cancellation.
fn exp_tail(n: u32, t: f64) -> f64 {
    if t < 1.0 {
        let mut term = (1..=n).fold(1.0, |acc, k| acc * t / k as f64);
        let mut sum = 0.0;
        for k in n + 1..n + 40 {
            sum += term;
            term *= t / k as f64;
        }
        (-t).exp() * sum
    } else {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..n {
            sum += term;
            term *= t / (k + 1) as f64;
        }
        1.0 - (-t).exp() * sum
    }
}

pub const MIN_SIGMA: f64 = 1.0;

/// Width and height of the blob at `mode`.
///
/// The map is restricted to a disk of radius 2×bandwidth, the window minimum
/// is subtracted, and σ is chosen so an isotropic Gaussian treated the same
/// way has the same mean squared radius. σ is floored at 1 px.
pub fn fit_gaussian(map: &Grid, mode: Point, bandwidth: f64) -> (f64, f64) {
    let radius = 2.0 * bandwidth;
    let amplitude = sample_bilinear(map, mode.x, mode.y);
    let mut pixels = Vec::new();
    let mut lo = f64::INFINITY;
    for ((y, x), &v) in map.indexed_iter() {
        let d2 = (x as f64 - mode.x).powi(2) + (y as f64 - mode.y).powi(2);
        if d2 <= radius * radius {
            pixels.push((d2, v));
            lo = lo.min(v);
        }
    }
    let (mut m2, mut mass) = (0.0, 0.0);
    for (d2, v) in pixels {
        let w = v - lo;
        m2 += w * d2;
        mass += w;
    }
    if mass <= 0.0 {
        return (MIN_SIGMA, amplitude);
    }
    let target = m2 / mass;
    // The clipped moment grows monotonically from 0 towards R²/3.
    let (mut a, mut b) = (1e-3, 4.0 * radius);
    if target >= clipped_gaussian_moment(b, radius) {
        return (b, amplitude);
    }
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if clipped_gaussian_moment(mid, radius) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    ((0.5 * (a + b)).max(MIN_SIGMA), amplitude)
}

fn label_of(a: AnnotationLabel) -> Labels {
    match a {
        AnnotationLabel::Face => Labels {
            face: true,
            ..Labels::default()
        },
        AnnotationLabel::Body => Labels {
            body: true,
            ..Labels::default()
        },
    }
}

/// The candidate at the frame center: σ = 5% of the diagonal, amplitude read
/// from the static map.
pub fn center_candidate(static_map: &Grid, depth: &Grid) -> Candidate {
    let dims = Dims::of(static_map);
    let c = dims.center();
    let sigma = 0.05 * dims.diagonal();
    let (x, y) = dims.pixel(c);
    Candidate {
        center: c,
        sigma,
        saliency: static_map[[y, x]].clamp(0.0, 1.0),
        mean_depth: disk_mean(depth, c, sigma),
        labels: Labels::CENTER,
        source: Source::Center,
    }
}

fn blob_candidates(map: &Grid, depth: &Grid, source: Source, cfg: &CandidateConfig) -> Vec<Candidate> {
    let Ok(modes) = mean_shift_grid(map, cfg) else {
        return Vec::new();
    };
    modes
        .into_iter()
        .map(|m| {
            let (sigma, amplitude) = fit_gaussian(map, m, cfg.bandwidth);
            Candidate {
                center: m,
                sigma,
                saliency: amplitude.clamp(0.0, 1.0),
                mean_depth: disk_mean(depth, m, sigma),
                labels: Labels::default(),
                source,
            }
        })
        .collect()
}

/// Positive part of the magnitude DoG, max-normalised; all zero when the
/// response is below the motion floor.
pub fn motion_map(motion: &MotionFeatures, floor: f64) -> Grid {
    let pos = motion.dog_mag.mapv(|v| v.max(0.0));
    let max = pos.fold(0.0f64, |m, &v| m.max(v));
    if max < floor {
        Grid::zeros(pos.dim())
    } else {
        pos / max
    }
}

/// Candidate set of one frame. Candidates closer than the merge radius to
/// an earlier one are absorbed into it (amplitude max, label union), with
/// the center first, then annotations, then the remaining cues by
/// decreasing amplitude; at most `max_candidates` are kept, the center
/// always among them.
pub fn extract_candidates(
    frame_index: usize,
    static_map: &SaliencyMap,
    motion: &MotionFeatures,
    annotations: &[Annotation],
    depth: &Grid,
    cfg: &CandidateConfig,
) -> CandidateSet {
    let dims = static_map.dims();
    let smap = static_map.to_max_normalized_or_zero();
    let center = center_candidate(&smap, depth);

    let annotated = annotations.iter().filter(|a| a.frame == frame_index).map(|a| {
        let p = Point::new(a.x * dims.width as f64, a.y * dims.height as f64);
        Candidate {
            center: p,
            sigma: a.sigma,
            saliency: 1.0,
            mean_depth: disk_mean(depth, p, a.sigma),
            labels: label_of(a.label),
            source: Source::Annotation,
        }
    });
    let mut cues = blob_candidates(&smap, depth, Source::Static, cfg);
    cues.extend(blob_candidates(&motion_map(motion, cfg.motion_floor), depth, Source::Motion, cfg));
    cues.sort_by(|a, b| b.saliency.total_cmp(&a.saliency));

    let mut kept: Vec<Candidate> = Vec::new();
    for c in std::iter::once(center).chain(annotated).chain(cues) {
        match kept
            .iter_mut()
            .find(|k| k.center.distance(c.center) < cfg.merge_radius())
        {
            Some(k) => {
                k.saliency = k.saliency.max(c.saliency);
                // The center label stays with the center candidate only.
                k.labels = k.labels.union(Labels {
                    center: false,
                    ..c.labels
                });
            }
            None => kept.push(c),
        }
    }
    let mut center = kept.remove(0);
    kept.sort_by(|a, b| b.saliency.total_cmp(&a.saliency));
    kept.truncate(cfg.max_candidates.saturating_sub(1));
    center.labels.center = true;
    kept.insert(0, center);
    CandidateSet {
        frame_index,
        candidates: kept,
    }
}
