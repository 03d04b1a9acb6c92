//! The recursive convolutional autoencoder.
//!
//! Each step's input is a seven-channel stack (R, G, B, flow u, flow v,
//! depth, previous saliency). Three conv/ReLU/pool stages encode it, a
//! 256-unit dense layer holds the latent code, and a dense layer plus three
//! unpool/conv stages decode a single saliency channel. Predictions are fed
//! back as the next step's saliency channel.

use std::path::Path;

use depthgaze_tensor::io::{read_network, write_network};
use depthgaze_tensor::{Gradients, Layer, Network, Tensor, TensorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{fit_gaussian, mean_shift_grid, CandidateConfig};
use crate::dataset::{FixationRecord, RgbdFrame, VideoSequence};
use crate::fixation::{densify, FixationSet, DEFAULT_SIGMA_FRACTION};
use crate::flow::{optical_flow, FlowConfig, FlowField};
use crate::grid::{gaussian_blob, resample_bilinear, Dims, Grid};
use crate::maps::{center_prior, SaliencyMap};
use crate::transition::{expand_steps, step_frames};

pub const STACK_CHANNELS: usize = 7;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no training videos")]
    EmptyTrainingSet,
    #[error("video {video}: no fixations at step frame {frame}")]
    GroundTruthMissing { video: String, frame: usize },
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

type Result<T, E = CnnError> = std::result::Result<T, E>;

/// Network input size and feature-map counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    pub width: usize,
    pub height: usize,
    /// Feature maps of the three encoder convolutions.
    pub channels: [usize; 3],
    pub latent: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            channels: [32, 64, 64],
            latent: 256,
        }
    }
}

impl NetworkShape {
    /// Reduced size for quick CPU runs.
    pub fn desk() -> Self {
        Self {
            width: 32,
            height: 24,
            channels: [8, 16, 16],
            latent: 256,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    fn bottleneck(&self) -> (usize, usize, usize) {
        (self.channels[2], self.height / 8, self.width / 8)
    }

    fn validate(&self) -> Result<()> {
        if self.width % 8 != 0 || self.height % 8 != 0 || self.width == 0 || self.height == 0 {
            return Err(CnnError::ShapeMismatch(format!(
                "network size {}x{} must be a positive multiple of 8",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<Layer> {
        let [c1, c2, c3] = self.channels;
        let (bc, bh, bw) = self.bottleneck();
        let flat = bc * bh * bw;
        vec![
            Layer::conv(STACK_CHANNELS, c1, 5),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::conv(c1, c2, 3),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::conv(c2, c3, 3),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::Reshape(vec![flat]),
            Layer::dense(flat, self.latent),
            Layer::Relu,
            Layer::dense(self.latent, flat),
            Layer::Relu,
            Layer::Reshape(vec![bc, bh, bw]),
            Layer::Unpool2x2,
            Layer::conv(c3, c2, 3),
            Layer::Relu,
            Layer::Unpool2x2,
            Layer::conv(c2, c1, 3),
            Layer::Relu,
            Layer::Unpool2x2,
            Layer::conv(c1, 1, 5),
        ]
    }

    /// Number of leading layers that produce the latent code.
    pub const ENCODER_LAYERS: usize = 12;

    /// Recovers the shape from a network built by [`NetworkShape::layers`].
    pub fn of_network(net: &Network) -> Result<Self> {
        let bad = || CnnError::ShapeMismatch("weights do not describe a saliency autoencoder".into());
        if net.layers.len() != Self::default().layers().len() {
            return Err(bad());
        }
        let conv_out = |i: usize| match &net.layers[i] {
            Layer::Conv2d { kernels, .. } => Ok(kernels.shape()[0]),
            _ => Err(bad()),
        };
        let (c1, c2, c3) = (conv_out(0)?, conv_out(3)?, conv_out(6)?);
        let latent = match &net.layers[10] {
            Layer::Dense { weights, .. } => weights.shape()[0],
            _ => return Err(bad()),
        };
        let Layer::Reshape(dims) = &net.layers[14] else {
            return Err(bad());
        };
        let &[_, bh, bw] = dims.as_slice() else {
            return Err(bad());
        };
        let shape = Self {
            width: bw * 8,
            height: bh * 8,
            channels: [c1, c2, c3],
            latent,
        };
        let reference = Network::new(shape.layers());
        let same = reference
            .parameters()
            .zip(net.parameters())
            .all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(bad());
        }
        Ok(shape)
    }
}

/// The trained model: network weights plus its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyNet {
    pub shape: NetworkShape,
    pub network: Network,
}

impl SaliencyNet {
    pub fn new(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut network = Network::new(shape.layers());
        network.init_he(seed);
        Ok(Self { shape, network })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| CnnError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        write_network(&mut f, &self.network)?;
        std::io::Write::flush(&mut f).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|source| CnnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let network = read_network(&mut std::io::BufReader::new(f))?;
        let shape = NetworkShape::of_network(&network)?;
        Ok(Self { shape, network })
    }

    /// Raw decoder output, `1×H×W` at network resolution.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.network.forward(input)?)
    }

    pub fn latent(&self, input: &Tensor) -> Result<Vec<f64>> {
        let encoder = Network::new(self.network.layers[..NetworkShape::ENCODER_LAYERS].to_vec());
        Ok(encoder.forward(input)?.into_data())
    }

    /// Saliency estimate at working resolution: clamped to [0,1] and
    /// max-normalised, the center prior when the output is all zero.
    pub fn predict(&self, stack: &FrameStack) -> Result<SaliencyMap> {
        let out = self.forward(&stack.at(self.shape.dims()))?;
        let dims = stack.dims();
        Ok(feedback_map(&output_grid(&out, self.shape.dims()), dims))
    }
}

fn output_grid(out: &Tensor, net_dims: Dims) -> Grid {
    Grid::from_shape_vec(net_dims.shape(), out.data().to_vec()).expect("single output channel")
}

/// Clamp to [0,1], resample to `dims`, max-normalise; center prior when
/// nothing is positive.
fn feedback_map(raw: &Grid, dims: Dims) -> SaliencyMap {
    let clamped = raw.mapv(|v| v.clamp(0.0, 1.0));
    let g = resample_bilinear(&clamped, dims);
    SaliencyMap::max_normalized(g).unwrap_or_else(|| center_prior(dims))
}

/// The seven-channel input of one step at working resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub data: Tensor,
}

impl FrameStack {
    pub fn dims(&self) -> Dims {
        let s = self.data.shape();
        Dims::new(s[2], s[1])
    }

    pub fn channel(&self, c: usize) -> Grid {
        let dims = self.dims();
        let plane = dims.area();
        Grid::from_shape_vec(dims.shape(), self.data.data()[c * plane..(c + 1) * plane].to_vec())
            .expect("plane shape")
    }

    /// The stack bilinearly resampled to `dims` (a copy when unchanged).
    pub fn at(&self, dims: Dims) -> Tensor {
        if dims == self.dims() {
            return self.data.clone();
        }
        let mut data = Vec::with_capacity(STACK_CHANNELS * dims.area());
        for c in 0..STACK_CHANNELS {
            data.extend(resample_bilinear(&self.channel(c), dims).iter());
        }
        Tensor::new(&[STACK_CHANNELS, dims.height, dims.width], data).expect("stack shape")
    }
}

/// Stacks `[R, G, B, u/W, v/W, depth, S(t−1)]`. Without depth the depth
/// channel is zero.
pub fn assemble_stack(frame: &RgbdFrame, flow: &FlowField, prev_saliency: &SaliencyMap, use_depth: bool) -> Result<FrameStack> {
    let dims = frame.dims();
    if flow.dims() != dims || prev_saliency.dims() != dims {
        return Err(CnnError::ShapeMismatch(format!(
            "frame {:?}, flow {:?}, saliency {:?}",
            dims,
            flow.dims(),
            prev_saliency.dims()
        )));
    }
    let scale = 1.0 / dims.width as f64;
    let prev = prev_saliency.to_max_normalized();
    let depth = if use_depth {
        frame.depth.clone()
    } else {
        Grid::zeros(dims.shape())
    };
    let planes = [
        frame.rgb[0].clone(),
        frame.rgb[1].clone(),
        frame.rgb[2].clone(),
        &flow.u * scale,
        &flow.v * scale,
        depth,
        prev.into_grid(),
    ];
    let mut data = Vec::with_capacity(STACK_CHANNELS * dims.area());
    for p in &planes {
        data.extend(p.iter());
    }
    Ok(FrameStack {
        data: Tensor::new(&[STACK_CHANNELS, dims.height, dims.width], data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub shape: NetworkShape,
    pub epochs: usize,
    pub base_lr: f64,
    /// Epochs at the base rate before halving starts.
    pub constant_epochs: usize,
    pub halving_period: usize,
    /// Lower bound of the halved rate; 0 halves without limit.
    pub min_lr: f64,
    pub momentum: f64,
    pub interval: usize,
    pub seed: u64,
    pub gt_sigma_fraction: f64,
    pub flow: FlowConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shape: NetworkShape::default(),
            epochs: 400,
            base_lr: 1e-4,
            constant_epochs: 200,
            halving_period: 50,
            min_lr: 0.0,
            momentum: 0.9,
            interval: 10,
            seed: 0,
            gt_sigma_fraction: DEFAULT_SIGMA_FRACTION,
            flow: FlowConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced network for quick CPU runs. The small network needs a much
    /// larger step to leave its initial plateau; the rate then halves down
    /// to a floor because the recursive saliency input makes larger steps
    /// oscillate once the fit is close.
    pub fn desk() -> Self {
        Self {
            shape: NetworkShape::desk(),
            epochs: 500,
            base_lr: 0.05,
            constant_epochs: 100,
            halving_period: 30,
            min_lr: 0.005,
            ..Self::default()
        }
    }

    /// Rate for a 1-based epoch: the base rate for the first
    /// `constant_epochs`, then halved every `halving_period` epochs.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch <= self.constant_epochs {
            return self.base_lr;
        }
        let halvings = (epoch - self.constant_epochs - 1) / self.halving_period.max(1) + 1;
        (self.base_lr / 2f64.powi(halvings as i32)).max(self.min_lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,loss\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.lr, e.loss));
    }
    s
}

/// Training input of one video.
pub struct TrainingVideo<'a> {
    pub video: &'a VideoSequence,
    pub fixations: &'a [FixationRecord],
}

/// Per-step fixed inputs of one video at network resolution: the first
/// six stack channels and the target map.
struct PreparedVideo {
    steps: Vec<(Tensor, Grid)>,
}

/// Flow from `t − interval` to `t` for every step frame (zero at the first).
pub fn step_flows(video: &VideoSequence, interval: usize, use_depth: bool, cfg: &FlowConfig) -> Vec<FlowField> {
    step_frames(video.len(), interval)
        .par_iter()
        .map(|&t| {
            if t < interval {
                FlowField::zeros(video.dims, if use_depth { 4 } else { 3 })
            } else {
                optical_flow(&video.frames[t - interval], &video.frames[t], use_depth, cfg)
                    .expect("frames of one video share dimensions")
            }
        })
        .collect()
}

fn prepare(v: &TrainingVideo<'_>, cfg: &TrainConfig, use_depth: bool) -> Result<PreparedVideo> {
    let dims = v.video.dims;
    let net_dims = cfg.shape.dims();
    let flows = step_flows(v.video, cfg.interval, use_depth, &cfg.flow);
    let placeholder = SaliencyMap::uniform(dims);
    let mut steps = Vec::new();
    for (t, flow) in step_frames(v.video.len(), cfg.interval).into_iter().zip(&flows) {
        let set = FixationSet::from_records(v.fixations, t, dims);
        let gt = densify(&set, dims, cfg.gt_sigma_fraction).map_err(|_| CnnError::GroundTruthMissing {
            video: v.video.video_id.clone(),
            frame: t,
        })?;
        let target = SaliencyMap::max_normalized(gt.into_grid()).expect("positive density");
        let stack = assemble_stack(&v.video.frames[t], flow, &placeholder, use_depth)?;
        steps.push((stack.at(net_dims), resample_bilinear(target.grid(), net_dims)));
    }
    Ok(PreparedVideo { steps })
}

fn with_saliency(fixed: &Tensor, saliency: &Grid) -> Tensor {
    let mut t = fixed.clone();
    let plane = saliency.len();
    t.data_mut()[6 * plane..].copy_from_slice(saliency.as_slice().expect("standard layout"));
    t
}

/// Squared-error loss and its gradient for one item.
fn item_loss(net: &Network, input: &Tensor, target: &Grid, batch: usize) -> Result<(f64, Gradients, Grid)> {
    let (out, trace) = net.forward_traced(input)?;
    let n = target.len() as f64;
    let diff: Vec<f64> = out.data().iter().zip(target.iter()).map(|(o, t)| o - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let upstream = Tensor::new(out.shape(), diff.iter().map(|d| 2.0 * d / (n * batch as f64)).collect())?;
    let (grads, _) = net.backward(&trace, &upstream)?;
    let out_grid = Grid::from_shape_vec(target.dim(), out.into_data()).expect("output plane");
    Ok((loss, grads, out_grid))
}

/// Trains with recursive batches: batch `k` holds step `k` of every video,
/// its saliency channel is the prediction of batch `k−1` (the center
/// prior for `k = 0`) treated as a constant. One momentum-SGD update per
/// batch; `on_epoch` sees every epoch's log entry.
pub fn train(
    videos: &[TrainingVideo<'_>],
    cfg: &TrainConfig,
    use_depth: bool,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(SaliencyNet, Vec<EpochLog>)> {
    if videos.is_empty() {
        return Err(CnnError::EmptyTrainingSet);
    }
    let mut model = SaliencyNet::new(cfg.shape, cfg.seed)?;
    let net_dims = cfg.shape.dims();
    let prepared: Vec<PreparedVideo> = videos
        .iter()
        .map(|v| prepare(v, cfg, use_depth))
        .collect::<Result<_>>()?;
    let max_steps = prepared.iter().map(|p| p.steps.len()).max().unwrap_or(0);
    let prior = center_prior(net_dims).into_grid();
    let mut velocity: Vec<Tensor> = model.network.parameters().map(|p| Tensor::zeros(p.shape())).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let mut feedback: Vec<Grid> = vec![prior.clone(); prepared.len()];
        let (mut loss_sum, mut items) = (0.0, 0usize);
        for k in 0..max_steps {
            let batch: Vec<usize> = (0..prepared.len()).filter(|&i| k < prepared[i].steps.len()).collect();
            let results: Vec<(f64, Gradients, Grid)> = batch
                .par_iter()
                .map(|&i| {
                    let (fixed, target) = &prepared[i].steps[k];
                    item_loss(&model.network, &with_saliency(fixed, &feedback[i]), target, batch.len())
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    CnnError::Tensor(TensorError::NonFinite(_)) => CnnError::NonFiniteLoss(epoch),
                    other => other,
                })?;
            let mut total = Gradients::zeros_like(&model.network);
            for (&i, (loss, grads, out)) in batch.iter().zip(results) {
                total.add_assign(&grads)?;
                loss_sum += loss;
                items += 1;
                feedback[i] = feedback_map(&out, net_dims).into_grid();
            }
            for ((param, vel), grad) in model.network.parameters_mut().zip(&mut velocity).zip(&total.0) {
                for ((p, v), g) in param.data_mut().iter_mut().zip(vel.data_mut()).zip(grad.data()) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
            }
        }
        let loss = loss_sum / items.max(1) as f64;
        if !loss.is_finite() {
            return Err(CnnError::NonFiniteLoss(epoch));
        }
        let entry = EpochLog { epoch, lr, loss };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((model, log))
}

/// Recursive prediction over a whole video: the first step uses the center
/// prior as its saliency input, each later step the previous prediction.
/// Every frame gets the map of the latest step at or before it.
pub fn predict_sequence(model: &SaliencyNet, video: &VideoSequence, use_depth: bool, interval: usize, flow_cfg: &FlowConfig) -> Result<Vec<SaliencyMap>> {
    if video.is_empty() {
        return Ok(Vec::new());
    }
    let flows = step_flows(video, interval, use_depth, flow_cfg);
    let mut prev = center_prior(video.dims);
    let mut maps = Vec::with_capacity(flows.len());
    for (t, flow) in step_frames(video.len(), interval).into_iter().zip(&flows) {
        let stack = assemble_stack(&video.frames[t], flow, &prev, use_depth)?;
        let map = model.predict(&stack)?;
        prev = map.clone();
        maps.push(map);
    }
    Ok(expand_steps(&maps, video.len(), interval))
}

/// Re-renders a map as a mixture of isotropic Gaussians at its mean-shift
/// modes (amplitude and σ from the fits), max-normalised. Maps without
/// structure become the center prior.
pub fn sharpen(map: &SaliencyMap, cfg: &CandidateConfig) -> SaliencyMap {
    let dims = map.dims();
    let grid = map.to_max_normalized_or_zero();
    let Ok(modes) = mean_shift_grid(&grid, cfg) else {
        return center_prior(dims);
    };
    let mut out = Grid::zeros(dims.shape());
    for m in modes {
        let (sigma, amplitude) = fit_gaussian(&grid, m, cfg.bandwidth);
        out.scaled_add(amplitude, &gaussian_blob(dims, m, sigma));
    }
    SaliencyMap::max_normalized(out).unwrap_or_else(|| center_prior(dims))
}
