//! The run configuration: every tunable in one JSON document.
//!
//! Missing keys take their defaults, unknown keys are rejected. Defaults:
//!
//! | key | default |
//! |---|---|
//! | `version` | 1 |
//! | `seed` | 42, shared by training, evaluation and quality sampling |
//! | `quality.num_splits` | 10 random balanced splits per frame |
//! | `quality.sigma_fraction` | 0.05 of the frame diagonal |
//! | `saliency.cell` | 4 px lattice cells |
//! | `saliency.falloff_fraction` | 0.15 of the diagonal |
//! | `baseline.interval` | 10 frames between steps |
//! | `baseline.threshold_fraction` | 0.5 of the ground-truth maximum |
//! | `baseline.render_sigma_fraction` | 0.05 of the diagonal |
//! | `baseline.flow.alpha` | 15/255 smoothness weight |
//! | `baseline.flow.levels` / `warps` / `iterations` | 3 / 1 / 100 |
//! | `baseline.flow.data_eps` / `edge_kappa` | 0.02 / 0.02, 0 turns either off |
//! | `baseline.flow.occlusion_check` / `median` | true / 5 px |
//! | `baseline.motion.sigma1` / `sigma2` | 2 / 4 px |
//! | `baseline.candidates.bandwidth` | 8 px |
//! | `baseline.candidates.max_candidates` | 10 |
//! | `baseline.svm.c_reg` / `epochs` / `balanced` | 1 / 200 / true, class-balanced hinge |
//! | `cnn.epochs` | 400 |
//! | `cnn.base_lr` | 1e-4, halved every 50 epochs after epoch 200 |
//! | `cnn.min_lr` | 0, no floor on the halved rate |
//! | `cnn.momentum` | 0.9 |
//! | `cnn.shape` | 128×96 input, feature maps 32/64/64, 256 latent units |
//! | `evaluation.n_neg_per_pos` | 10 negatives per fixation |
//!
//! The `seed` key overrides the per-section seeds when the document is
//! resolved with [`RunConfig::seeded`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::TrainConfig;
use crate::evaluation::EvalConfig;
use crate::fixation::HomogeneityConfig;
use crate::saliency::GraphSaliencyConfig;
use crate::transition::BaselineConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Invalid { path: std::path::PathBuf, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub quality: HomogeneityConfig,
    pub saliency: GraphSaliencyConfig,
    pub baseline: BaselineConfig,
    pub cnn: TrainConfig,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            quality: HomogeneityConfig::default(),
            saliency: GraphSaliencyConfig::default(),
            baseline: BaselineConfig::default(),
            cnn: TrainConfig::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let invalid = |reason: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason,
        };
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(invalid(format!("unsupported version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Copies the top-level seed into every section.
    pub fn seeded(mut self) -> Self {
        self.quality.rng_seed = self.seed;
        self.baseline.svm.seed = self.seed;
        self.cnn.seed = self.seed;
        self.evaluation.seed = self.seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}", Path::new("x")).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"cnn": {"epochz": 3}}"#, Path::new("x")).is_err());
        assert!(RunConfig::from_json(r#"{"colour": 1}"#, Path::new("x")).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.cnn.epochs = 7;
        cfg.baseline.candidates.bandwidth = 5.0;
        let back = RunConfig::from_json(&cfg.to_json(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn wrong_version_rejected() {
        assert!(RunConfig::from_json(r#"{"version": 2}"#, Path::new("x")).is_err());
    }
}
