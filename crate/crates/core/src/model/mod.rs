//! Quality models and the interface the trainer drives them through.

pub mod ast;
pub mod cnn;
mod config;
pub mod patches;

pub use ast::AstModel;
pub use cnn::{CnnConfig, CnnInput, CnnModel};
pub use config::{patches_per_axis, ModelConfig, Normalization};
pub use patches::{extract_patches, extract_patches_to, PatchSequence};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dsp::LogMelSpectrogram;
use crate::params::ParamStore;
use crate::scores::QualityScores;
use crate::train::autodiff::{Graph, NodeId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("axis of length {len} is narrower than one {patch}-wide patch")]
    TooSmall { len: usize, patch: usize },
    #[error("spectrogram has {found} mel bins, model expects {expected}")]
    MelMismatch { found: usize, expected: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("non-finite activations in forward pass")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Ast,
    Cnn,
}

impl ModelKind {
    /// Tag stored in checkpoint headers.
    pub fn tag(self) -> u32 {
        match self {
            ModelKind::Ast => 1,
            ModelKind::Cnn => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(ModelKind::Ast),
            2 => Some(ModelKind::Cnn),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ast => "ast",
            ModelKind::Cnn => "cnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ast" => Ok(ModelKind::Ast),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(format!(
                "unknown model kind '{other}' (expected ast or cnn)"
            )),
        }
    }
}

/// A differentiable model producing one raw output per quality dimension,
/// in [`crate::scores::Dimension::ALL`] order.
pub trait QualityModel: Sync {
    /// Per-clip input prepared once from the spectrogram.
    type Input: Send + Sync;

    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn prepare(&self, spec: &LogMelSpectrogram) -> Result<Self::Input, ModelError>;
    /// Record the forward pass on `g`; returns the five `1×1` head outputs.
    fn forward(&self, g: &mut Graph, input: &Self::Input) -> Result<[NodeId; 5], ModelError>;

    /// Unclipped head outputs.
    fn raw_outputs(&self, input: &Self::Input) -> Result<[f64; 5], ModelError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, input)?;
        Ok(out.map(|n| g.value(n).data[0]))
    }

    /// Inference scores, clipped to the 1–5 scale, all dimensions present.
    fn predict(&self, spec: &LogMelSpectrogram) -> Result<QualityScores, ModelError> {
        let input = self.prepare(spec)?;
        Ok(QualityScores::clipped(self.raw_outputs(&input)?))
    }
}
