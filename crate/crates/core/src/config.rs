//! Flat key-value run configuration (TOML syntax, no tables).
//!
//! ```toml
//! embed_dim = 64
//! n_layers = 2
//! max_duration_s = 12.0
//! learning_rate = 1e-4
//! max_epochs = 50
//! ```
//!
//! Unset keys take the desk-scale defaults. `learning_rate` defaults to the
//! model kind's protocol value (1e-6 transformer, 1e-3 CNN). `norm_mean`
//! and `norm_std` enable input normalization only when both are set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CnnConfig, ModelConfig, ModelKind, Normalization};
use crate::train::{Monitor, TrainConfig};

pub const SEED_ENV: &str = "SQA_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub patch_size: usize,
    pub patch_stride_time: usize,
    pub patch_stride_freq: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub max_duration_s: f64,
    pub n_mels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_std: Option<f64>,

    pub cnn_channels: Vec<usize>,
    pub cnn_kernel: usize,
    /// `[freq, time]` max-pool factors applied at every stage.
    pub cnn_pool: [usize; 2],

    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub monitor: String,
    pub lr_factor: f64,
    pub min_lr: f64,

    /// Coordinates probed per parameter tensor by `gradcheck`.
    pub gradcheck_coords: usize,
    pub gradcheck_step: f64,
    /// Input length of the models built by `gradcheck`.
    pub gradcheck_duration_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk();
        let c = CnnConfig::default();
        let t = TrainConfig::cnn_protocol();
        Self {
            embed_dim: m.embed_dim,
            patch_size: m.patch_size,
            patch_stride_time: m.patch_stride_time,
            patch_stride_freq: m.patch_stride_freq,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            mlp_ratio: m.mlp_ratio,
            max_duration_s: m.max_duration_s,
            n_mels: m.n_mels,
            norm_mean: None,
            norm_std: None,
            cnn_channels: c.channels,
            cnn_kernel: c.kernel,
            cnn_pool: [c.pools[0].0, c.pools[0].1],
            learning_rate: None,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            lr_patience: t.lr_patience,
            batch_size: t.batch_size,
            seed: t.seed,
            monitor: t.monitor.to_string(),
            lr_factor: t.lr_factor,
            min_lr: t.min_lr,
            gradcheck_coords: 16,
            gradcheck_step: crate::train::gradcheck::MODEL_STEP,
            gradcheck_duration_s: 0.36,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Apply the `SQA_SEED` override if it is set.
    pub fn with_env_seed(mut self) -> Result<Self, ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| {
                ConfigError::Parse(format!("{SEED_ENV}='{v}' is not an unsigned integer"))
            })?;
        }
        Ok(self)
    }

    /// Fix the kind-dependent defaults so the result fully describes a run.
    pub fn resolved(&self, kind: ModelKind) -> Self {
        let mut out = self.clone();
        out.learning_rate = Some(self.learning_rate.unwrap_or(match kind {
            ModelKind::Ast => TrainConfig::ast_default().learning_rate,
            ModelKind::Cnn => TrainConfig::cnn_protocol().learning_rate,
        }));
        out
    }

    /// Canonical text form, parseable by [`RunConfig::parse`].
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    fn normalization(&self) -> Result<Option<Normalization>, ConfigError> {
        match (self.norm_mean, self.norm_std) {
            (Some(mean), Some(std)) => Ok(Some(Normalization { mean, std })),
            (None, None) => Ok(None),
            _ => Err(ConfigError::Parse(
                "norm_mean and norm_std must be set together".into(),
            )),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let cfg = ModelConfig {
            embed_dim: self.embed_dim,
            patch_size: self.patch_size,
            patch_stride_time: self.patch_stride_time,
            patch_stride_freq: self.patch_stride_freq,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            mlp_ratio: self.mlp_ratio,
            max_duration_s: self.max_duration_s,
            n_mels: self.n_mels,
            normalization: self.normalization()?,
            ..ModelConfig::desk()
        };
        cfg.validate()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn cnn_config(&self) -> Result<CnnConfig, ConfigError> {
        let cfg = CnnConfig {
            channels: self.cnn_channels.clone(),
            kernel: self.cnn_kernel,
            pools: vec![(self.cnn_pool[0], self.cnn_pool[1]); self.cnn_channels.len()],
            n_mels: self.n_mels,
            max_duration_s: self.max_duration_s,
            normalization: self.normalization()?,
            ..CnnConfig::default()
        };
        cfg.validate()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self, kind: ModelKind) -> Result<TrainConfig, ConfigError> {
        let monitor: Monitor = self.monitor.parse().map_err(ConfigError::Parse)?;
        let cfg = TrainConfig {
            learning_rate: self.resolved(kind).learning_rate.expect("resolved"),
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            lr_patience: self.lr_patience,
            batch_size: self.batch_size,
            seed: self.seed,
            lr_factor: self.lr_factor,
            min_lr: self.min_lr,
            monitor,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }
}
