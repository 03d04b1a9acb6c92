//! Synthetic RGBD scenes with moving blobs, scripted viewers and exact
//! ground-truth flow, written in the dataset layout.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    write_annotations, write_fixations, write_frame, write_manifest, Annotation, AnnotationLabel, DatasetError,
    DatasetManifest, DepthUnit, FixationRecord, Split, VideoEntry,
};
use crate::flow::{write_flow, FlowError, FlowField};
use crate::grid::{gaussian_blur, Dims, Grid, Point};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// Straight motion from `start`, reflected at the frame border.
    Linear { start: [f64; 2], velocity: [f64; 2] },
    /// Circular motion; angles in radians, speed in radians per frame.
    Orbit {
        center: [f64; 2],
        radius: f64,
        angular_speed: f64,
        phase: f64,
    },
    /// Linear motion with start and direction drawn per video.
    Random { speed: f64 },
    /// A random orbit around the frame center: radius drawn from
    /// `[min_radius, max_radius]`, random phase and direction.
    RandomOrbit {
        min_radius: f64,
        max_radius: f64,
        speed: f64,
    },
    Static { position: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub trajectory: Trajectory,
    pub color: [f64; 3],
    /// Scene depth in [0,1], 0 nearest.
    pub depth: f64,
    pub radius: f64,
    #[serde(default)]
    pub label: Option<AnnotationLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub color: [f64; 3],
    pub depth: f64,
    /// Amplitude of a static smooth random pattern added to the colour.
    #[serde(default)]
    pub texture: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FixationPolicy {
    FollowBlob { blob: usize },
    Center,
    /// Half the viewers left of center, half right, `separation` px apart.
    TwoCluster { separation: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub videos: usize,
    pub test_videos: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub background: Background,
    pub blobs: Vec<BlobSpec>,
    pub fixation_policy: FixationPolicy,
    pub viewers: usize,
    /// Standard deviation of the fixation jitter in pixels.
    pub jitter: f64,
    /// Standard deviation of per-frame colour noise.
    pub noise: f64,
    pub depth_noise: f64,
    /// Step between frames of the ground-truth flow sidecars.
    pub flow_interval: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            videos: 1,
            test_videos: 0,
            frames: 20,
            width: 128,
            height: 96,
            background: Background {
                color: [0.2, 0.2, 0.25],
                depth: 0.9,
                texture: 0.0,
            },
            blobs: vec![BlobSpec {
                trajectory: Trajectory::Linear {
                    start: [40.0, 40.0],
                    velocity: [1.0, 0.5],
                },
                color: [0.9, 0.8, 0.2],
                depth: 0.3,
                radius: 8.0,
                label: None,
            }],
            fixation_policy: FixationPolicy::FollowBlob { blob: 0 },
            viewers: 6,
            jitter: 2.0,
            noise: 0.01,
            depth_noise: 0.0,
            flow_interval: 10,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Two blobs with the background's colour, moving on random paths; the
    /// viewers follow the one that stands out in depth, the other sits at
    /// background depth.
    pub fn depth_ambiguity(seed: u64) -> Self {
        let color = [0.45, 0.45, 0.45];
        let blob = |depth| BlobSpec {
            trajectory: Trajectory::Random { speed: 1.0 },
            color,
            depth,
            radius: 9.0,
            label: None,
        };
        Self {
            videos: 8,
            test_videos: 3,
            frames: 60,
            background: Background {
                color,
                depth: 0.9,
                texture: 0.15,
            },
            blobs: vec![blob(0.2), blob(0.9)],
            fixation_policy: FixationPolicy::FollowBlob { blob: 0 },
            noise: 0.02,
            seed,
            ..Self::default()
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.videos == 0 || self.frames == 0 || self.width < 8 || self.height < 8 {
            return bad("videos, frames and size must be positive (size at least 8)");
        }
        if self.test_videos > self.videos {
            return bad("test_videos exceeds videos");
        }
        if self.viewers == 0 {
            return bad("at least one viewer is needed");
        }
        if let FixationPolicy::FollowBlob { blob } = self.fixation_policy {
            if blob >= self.blobs.len() {
                return bad("followed blob does not exist");
            }
        }
        for b in &self.blobs {
            if !(b.radius > 0.0) || 2.0 * b.radius >= self.width.min(self.height) as f64 {
                return bad("blob radius must be positive and fit the frame");
            }
            if !(0.0..=1.0).contains(&b.depth) {
                return bad("blob depth must lie in [0,1]");
            }
        }
        if !(0.0..=1.0).contains(&self.background.depth) {
            return bad("background depth must lie in [0,1]");
        }
        if self.flow_interval == 0 {
            return bad("flow_interval must be positive");
        }
        Ok(())
    }
}

/// Reflects a coordinate into `[lo, hi]`.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

/// Blob centers for every frame, kept at least a radius inside the frame.
fn resolve_path(blob: &BlobSpec, dims: Dims, frames: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let r = blob.radius;
    let (xl, xh) = (r, dims.width as f64 - 1.0 - r);
    let (yl, yh) = (r, dims.height as f64 - 1.0 - r);
    let linear = |start: [f64; 2], vel: [f64; 2]| -> Vec<Point> {
        (0..frames)
            .map(|t| {
                let t = t as f64;
                Point::new(
                    reflect(start[0] + vel[0] * t, xl, xh),
                    reflect(start[1] + vel[1] * t, yl, yh),
                )
            })
            .collect()
    };
    let orbit = |c: [f64; 2], radius: f64, speed: f64, phase: f64| -> Vec<Point> {
        (0..frames)
            .map(|t| {
                let a = phase + speed * t as f64;
                Point::new(
                    (c[0] + radius * a.cos()).clamp(xl, xh),
                    (c[1] + radius * a.sin()).clamp(yl, yh),
                )
            })
            .collect()
    };
    match &blob.trajectory {
        Trajectory::Linear { start, velocity } => linear(*start, *velocity),
        Trajectory::Static { position } => linear(*position, [0.0, 0.0]),
        Trajectory::Orbit {
            center,
            radius,
            angular_speed,
            phase,
        } => orbit(*center, *radius, *angular_speed, *phase),
        Trajectory::Random { speed } => {
            let start = [rng.random_range(xl..=xh), rng.random_range(yl..=yh)];
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            linear(start, [speed * angle.cos(), speed * angle.sin()])
        }
        Trajectory::RandomOrbit {
            min_radius,
            max_radius,
            speed,
        } => {
            let radius = rng.random_range(*min_radius..=*max_radius);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let c = dims.center();
            orbit([c.x, c.y], radius, dir * speed / radius.max(1e-9), phase)
        }
    }
}

/// Fraction of the pixel covered by a disk, with a one-pixel linear ramp.
fn coverage(p: Point, center: Point, radius: f64) -> f64 {
    (radius + 0.5 - p.distance(center)).clamp(0.0, 1.0)
}

/// One rendered video before it is written to disk.
#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub id: String,
    pub rgb: Vec<[Grid; 3]>,
    /// Scene depth in [0,1] per frame, before quantisation.
    pub depth: Vec<Grid>,
    /// Blob centers, `paths[blob][frame]`.
    pub paths: Vec<Vec<Point>>,
    pub fixations: Vec<FixationRecord>,
    pub annotations: Vec<Annotation>,
    /// Exact flow from frame `t − interval` to `t`, keyed by `t`.
    pub flow_gt: BTreeMap<usize, FlowField>,
}

pub fn video_id(index: usize) -> String {
    format!("v{index:03}")
}

/// Raw 16-bit millimetre value written for a scene depth in [0,1].
pub fn depth_to_mm(d: f64) -> u16 {
    (500.0 + 4000.0 * d.clamp(0.0, 1.0)).round() as u16
}

fn per_video_rng(seed: u64, video: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(video as u64 + 1);
    rng
}

/// A draw from N(0, σ²) in 2-D truncated to radius 3σ.
fn jitter(rng: &mut ChaCha8Rng, sigma: f64) -> (f64, f64) {
    if sigma <= 0.0 {
        return (0.0, 0.0);
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let (dx, dy) = (n.sample(rng), n.sample(rng));
        if dx.hypot(dy) <= 3.0 * sigma {
            return (dx, dy);
        }
    }
}

pub fn render_video(spec: &SceneSpec, index: usize) -> Result<SynthVideo, SynthError> {
    spec.validate()?;
    let dims = spec.dims();
    let mut rng = per_video_rng(spec.seed, index);
    let paths: Vec<Vec<Point>> = spec
        .blobs
        .iter()
        .map(|b| resolve_path(b, dims, spec.frames, &mut rng))
        .collect();
    let texture: Vec<Grid> = (0..3)
        .map(|_| {
            if spec.background.texture == 0.0 {
                return Grid::zeros(dims.shape());
            }
            let raw = Grid::from_shape_fn(dims.shape(), |_| rng.random::<f64>() - 0.5);
            let smooth = gaussian_blur(&raw, 1.5);
            let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            smooth * (spec.background.texture / peak.max(1e-12))
        })
        .collect();
    // The pattern is shared by the three channels' base so it also shows in
    // intensity; per-channel variation stays small.
    let base: Vec<Grid> = (0..3)
        .map(|c| &texture[0] * 0.8 + &texture[c] * 0.2 + spec.background.color[c])
        .collect();
    let color_noise = Normal::new(0.0, spec.noise.max(0.0)).expect("noise sigma");
    let depth_noise = Normal::new(0.0, spec.depth_noise.max(0.0)).expect("noise sigma");

    let mut rgb = Vec::with_capacity(spec.frames);
    let mut depth = Vec::with_capacity(spec.frames);
    // Topmost blob index per pixel and frame, for ground-truth flow.
    let mut owner: Vec<Array2<Option<usize>>> = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut planes: [Grid; 3] = [base[0].clone(), base[1].clone(), base[2].clone()];
        let mut d = Grid::from_elem(dims.shape(), spec.background.depth);
        let mut own = Array2::from_elem(dims.shape(), None);
        for (k, blob) in spec.blobs.iter().enumerate() {
            let c = paths[k][t];
            for ((y, x), dv) in d.indexed_iter_mut() {
                let a = coverage(Point::new(x as f64, y as f64), c, blob.radius);
                if a <= 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    let p = &mut planes[ch][[y, x]];
                    *p = (1.0 - a) * *p + a * blob.color[ch];
                }
                if a >= 0.5 {
                    *dv = blob.depth;
                    own[[y, x]] = Some(k);
                }
            }
        }
        for p in planes.iter_mut() {
            p.mapv_inplace(|v| {
                let n = if spec.noise > 0.0 { color_noise.sample(&mut rng) } else { 0.0 };
                (v + n).clamp(0.0, 1.0)
            });
        }
        if spec.depth_noise > 0.0 {
            d.mapv_inplace(|v| (v + depth_noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        rgb.push(planes);
        depth.push(d);
        owner.push(own);
    }

    let mut flow_gt = BTreeMap::new();
    for t in (spec.flow_interval..spec.frames).step_by(spec.flow_interval) {
        let s = t - spec.flow_interval;
        let mut f = FlowField::zeros(dims, 4);
        for ((y, x), o) in owner[s].indexed_iter() {
            if let Some(k) = *o {
                f.u[[y, x]] = paths[k][t].x - paths[k][s].x;
                f.v[[y, x]] = paths[k][t].y - paths[k][s].y;
            }
        }
        flow_gt.insert(t, f);
    }

    let (w, h) = (dims.width as f64, dims.height as f64);
    let mut fixations = Vec::new();
    for t in 0..spec.frames {
        for viewer in 0..spec.viewers {
            let target = match spec.fixation_policy {
                FixationPolicy::FollowBlob { blob } => paths[blob][t],
                FixationPolicy::Center => dims.center(),
                FixationPolicy::TwoCluster { separation } => {
                    let side = if viewer % 2 == 0 { -0.5 } else { 0.5 };
                    Point::new(dims.center().x + side * separation, dims.center().y)
                }
            };
            let (dx, dy) = jitter(&mut rng, spec.jitter);
            fixations.push(FixationRecord {
                frame_index: t,
                viewer_id: format!("p{viewer:02}"),
                x: ((target.x + dx) / w).clamp(0.0, 1.0),
                y: ((target.y + dy) / h).clamp(0.0, 1.0),
            });
        }
    }

    let mut annotations = Vec::new();
    for (k, blob) in spec.blobs.iter().enumerate() {
        if let Some(label) = blob.label {
            for t in 0..spec.frames {
                annotations.push(Annotation {
                    frame: t,
                    label,
                    x: paths[k][t].x / w,
                    y: paths[k][t].y / h,
                    sigma: blob.radius,
                });
            }
        }
    }
    annotations.sort_by_key(|a| a.frame);

    Ok(SynthVideo {
        id: video_id(index),
        rgb,
        depth,
        paths,
        fixations,
        annotations,
        flow_gt,
    })
}

pub const ANNOTATION_FILE: &str = "annotations.csv";

/// Ground-truth flow sidecar paths for step frame `t`.
pub fn flow_gt_paths(root: &Path, video: &str, t: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let dir = crate::dataset::video_dir(root, video).join("flow_gt");
    (dir.join(format!("{t:06}_u.dgfl")), dir.join(format!("{t:06}_v.dgfl")))
}

/// Renders every video of the spec and writes the dataset under `out`.
pub fn generate_scene(spec: &SceneSpec, out: &Path) -> Result<DatasetManifest, SynthError> {
    spec.validate()?;
    let mut entries = Vec::new();
    let mut split = BTreeMap::new();
    for i in 0..spec.videos {
        let v = render_video(spec, i)?;
        for (t, (rgb, d)) in v.rgb.iter().zip(&v.depth).enumerate() {
            let raw = d.mapv(depth_to_mm);
            write_frame(out, &v.id, t, rgb, &raw)?;
        }
        write_fixations(out, &v.id, &v.fixations)?;
        let annotations = if v.annotations.is_empty() {
            None
        } else {
            write_annotations(out, &v.id, ANNOTATION_FILE, &v.annotations)?;
            Some(ANNOTATION_FILE.to_string())
        };
        for (&t, f) in &v.flow_gt {
            let (pu, pv) = flow_gt_paths(out, &v.id, t);
            write_flow(&pu, &pv, f)?;
        }
        let role = if i >= spec.videos - spec.test_videos {
            Split::Test
        } else {
            Split::Train
        };
        split.insert(v.id.clone(), role);
        entries.push(VideoEntry {
            id: v.id,
            frames: spec.frames,
            depth_unit: DepthUnit::Mm,
            annotations,
        });
    }
    let manifest = DatasetManifest { videos: entries, split };
    write_manifest(out, &manifest)?;
    Ok(manifest)
}
