//! Reverse-mode differentiation, per-task MSE, Adam, and the
//! early-stopping training loop.

pub mod adam;
pub mod autodiff;
mod fit;
pub mod gradcheck;
pub mod loss;
pub mod schedule;

pub use adam::{adam_step, OptimizerState};
pub use fit::{
    batch_gradients, fit, predict_all, sample_backward, EpochRecord, FitOutcome, History, Monitor,
    Sample, TrainConfig,
};
pub use loss::{mse_grad, mse_loss};
pub use schedule::{EpochDecision, PlateauController};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training performed: max_epochs is 0")]
    NoTraining,
    #[error("training and validation sets must both be non-empty")]
    EmptyData,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradients: training diverged")]
    Divergence,
    #[error(transparent)]
    Model(#[from] ModelError),
}
