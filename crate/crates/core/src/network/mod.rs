//! Residual networks, hard boundary encodings and checkpoints.

pub mod checkpoint;
mod field;
mod resnet;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use checkpoint::Checkpoint;
pub use field::{BoundaryEncoder, DerivOrder, FieldBatch, FieldModel, PointFn, TracedField};
pub use resnet::{Activation, InitScheme, ResNetConfig, ResNetParams, BIAS_BOUND};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}
