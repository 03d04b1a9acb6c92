//! Dense row-major tensors and the handful of layers a convolutional
//! autoencoder needs: same-padded 2D convolution, 2×2 max-pooling with
//! argmax memory, 2×2 unpooling, fully-connected maps and ReLU, each with an
//! exact reverse-mode gradient.
//!
//! Everything is computed in `f64` with a fixed accumulation order, so
//! identical inputs give bit-identical outputs.

mod error;
mod tensor;

pub mod conv;
pub mod dense;
pub mod io;
pub mod network;
pub mod pool;

pub use error::TensorError;
pub use network::{Gradients, Layer, Network, Trace};
pub use pool::{PoolIndexMap, UnpoolMode};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
