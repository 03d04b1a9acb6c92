//! Depth-aware video saliency.
//!
//! The crate covers the whole pipeline on RGBD clips at a fixed working
//! resolution: loading, fixation ground truth, static and motion cues,
//! the candidate-transition baseline, the recursive convolutional
//! autoencoder, evaluation, and a synthetic scene generator.

pub mod autoencoder;
pub mod candidates;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod fixation;
pub mod flow;
pub mod grid;
pub mod maps;
pub mod overlay;
pub mod saliency;
pub mod synth;
pub mod transition;

pub use grid::{Dims, Grid, Point};
pub use maps::{center_prior, Normalization, ProbabilityMap, SaliencyMap};
