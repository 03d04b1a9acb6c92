//! A sequential stack of layers with a recorded forward pass and exact
//! reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_backward, conv2d_forward};
use crate::dense::{dense_backward, dense_forward};
use crate::pool::{maxpool2x2, maxpool2x2_backward, unpool2x2, unpool2x2_backward, PoolIndexMap, UnpoolMode};
use crate::{Result, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d { kernels: Tensor, bias: Tensor },
    Dense { weights: Tensor, bias: Tensor },
    Relu,
    MaxPool2x2,
    /// Fixed-location (upper-left) unpooling.
    Unpool2x2,
    Reshape(Vec<usize>),
}

impl Layer {
    /// Zero-initialised convolution with `out` kernels of size `k×k`.
    pub fn conv(inp: usize, out: usize, k: usize) -> Self {
        Layer::Conv2d {
            kernels: Tensor::zeros(&[out, inp, k, k]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn dense(inp: usize, out: usize) -> Self {
        Layer::Dense {
            weights: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d { kernels, bias } => Some((kernels, bias)),
            Layer::Dense { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d { kernels, bias } => Some((kernels, bias)),
            Layer::Dense { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` for Glorot-style initialisation.
    fn fans(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Conv2d { kernels, .. } => {
                let s = kernels.shape();
                let area = s[2] * s[3];
                Some((s[1] * area, s[0] * area))
            }
            Layer::Dense { weights, .. } => Some((weights.shape()[1], weights.shape()[0])),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
enum Cache {
    Input(Tensor),
    Mask(Vec<bool>),
    Pool(PoolIndexMap),
    Shape(Vec<usize>),
    Unpool,
}

/// What a forward pass must remember for [`Network::backward`].
#[derive(Clone, Debug, Default)]
pub struct Trace {
    caches: Vec<Cache>,
}

impl Trace {
    pub fn is_recorded(&self) -> bool {
        !self.caches.is_empty()
    }

    /// All ReLU on/off decisions and pooling argmax choices, in layer order.
    /// Two passes with the same pattern evaluate the same linear function.
    pub fn activation_pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let mut masks = Vec::new();
        let mut argmax = Vec::new();
        for c in &self.caches {
            match c {
                Cache::Mask(m) => masks.extend_from_slice(m),
                Cache::Pool(p) => argmax.extend_from_slice(&p.argmax),
                _ => {}
            }
        }
        (masks, argmax)
    }
}

/// Parameter gradients in declaration order (same order as
/// [`Network::parameters`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.parameters().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|t| t.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Weight tensors then bias, layer by layer.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().map(Tensor::len).sum()
    }

    /// Weights uniform in ±√(6/(fan_in+fan_out)), biases zero.
    pub fn init_glorot(&mut self, seed: u64) {
        self.init_uniform(seed, |fan_in, fan_out| (6.0 / (fan_in + fan_out) as f64).sqrt());
    }

    /// Uniform init scaled by fan-in only, which keeps activation variance
    /// roughly constant through ReLU stacks.
    pub fn init_he(&mut self, seed: u64) {
        self.init_uniform(seed, |fan_in, _| (6.0 / fan_in as f64).sqrt());
    }

    fn init_uniform(&mut self, seed: u64, limit: impl Fn(usize, usize) -> f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let Some((fan_in, fan_out)) = layer.fans() else {
                continue;
            };
            let limit = limit(fan_in, fan_out);
            let (w, b) = layer.params_mut().expect("parametric layer");
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-limit..=limit));
            b.data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv2d { kernels, bias } => conv2d_forward(&x, kernels, bias)?,
                Layer::Dense { weights, bias } => dense_forward(&x, weights, bias)?,
                Layer::Relu => {
                    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    x
                }
                Layer::MaxPool2x2 => maxpool2x2(&x)?.0,
                Layer::Unpool2x2 => unpool2x2(&x, UnpoolMode::FixedLocation)?,
                Layer::Reshape(shape) => x.reshape(shape)?,
            };
        }
        if !x.is_finite() {
            return Err(TensorError::NonFinite("Network::forward"));
        }
        Ok(x)
    }

    pub fn forward_traced(&self, input: &Tensor) -> Result<(Tensor, Trace)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = match layer {
                Layer::Conv2d { kernels, bias } => {
                    let y = conv2d_forward(&x, kernels, bias)?;
                    caches.push(Cache::Input(x));
                    y
                }
                Layer::Dense { weights, bias } => {
                    let y = dense_forward(&x, weights, bias)?;
                    caches.push(Cache::Input(x));
                    y
                }
                Layer::Relu => {
                    let mask = x.data().iter().map(|&v| v > 0.0).collect();
                    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    caches.push(Cache::Mask(mask));
                    x
                }
                Layer::MaxPool2x2 => {
                    let (y, idx) = maxpool2x2(&x)?;
                    caches.push(Cache::Pool(idx));
                    y
                }
                Layer::Unpool2x2 => {
                    caches.push(Cache::Unpool);
                    unpool2x2(&x, UnpoolMode::FixedLocation)?
                }
                Layer::Reshape(shape) => {
                    caches.push(Cache::Shape(x.shape().to_vec()));
                    x.reshape(shape)?
                }
            };
        }
        if !x.is_finite() {
            return Err(TensorError::NonFinite("Network::forward_traced"));
        }
        Ok((x, Trace { caches }))
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, upstream: &Tensor) -> Result<(Gradients, Tensor)> {
        if !trace.is_recorded() {
            return Err(TensorError::GraphNotRecorded);
        }
        if trace.caches.len() != self.layers.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Network::backward trace",
                expected: vec![self.layers.len()],
                actual: vec![trace.caches.len()],
            });
        }
        let mut grads: Vec<Tensor> = Vec::new();
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            g = match (layer, cache) {
                (Layer::Conv2d { kernels, .. }, Cache::Input(x)) => {
                    let (gi, gk, gb) = conv2d_backward(x, kernels, &g)?;
                    grads.push(gb);
                    grads.push(gk);
                    gi
                }
                (Layer::Dense { weights, .. }, Cache::Input(x)) => {
                    let (gi, gw, gb) = dense_backward(x, weights, &g)?;
                    grads.push(gb);
                    grads.push(gw);
                    gi
                }
                (Layer::Relu, Cache::Mask(mask)) => {
                    g.data_mut()
                        .iter_mut()
                        .zip(mask)
                        .for_each(|(v, &on)| if !on { *v = 0.0 });
                    g
                }
                (Layer::MaxPool2x2, Cache::Pool(idx)) => maxpool2x2_backward(&g, idx)?,
                (Layer::Unpool2x2, Cache::Unpool) => unpool2x2_backward(&g, UnpoolMode::FixedLocation)?,
                (Layer::Reshape(_), Cache::Shape(prev)) => g.reshape(prev)?,
                _ => return Err(TensorError::GraphNotRecorded),
            };
        }
        grads.reverse();
        let grads = Gradients(grads);
        if !grads.is_finite() || !g.is_finite() {
            return Err(TensorError::NonFinite("Network::backward"));
        }
        Ok((grads, g))
    }
}
