//! Minimal training engine: layers, loss, optimizers, range-wise
//! forward/backward and gradient verification.
//!
//! Gradient convention: the loss averages over the batch, layers propagate
//! unscaled chain-rule products, so parameter gradients are per-batch sums
//! consistent with the loss scaling. All model state is f32; the gradient
//! checker re-evaluates the loss in f64.

mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;

pub use gradcheck::{gradient_check, reference_loss_f64, ParamKind, Perturb};
pub use layer::{Layer, LayerSpec};
pub use loss::softmax_cross_entropy;
pub use network::Network;
pub use optim::{Adam, Optimizer, OptimizerKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("backward called without a cached forward")]
    MissingCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("layer range {from}..{to} invalid for {len} layers")]
    RangeOutOfBounds { from: usize, to: usize, len: usize },
    #[error("layer {index} ({kind}): {source}")]
    AtLayer {
        index: usize,
        kind: String,
        #[source]
        source: Box<NnError>,
    },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
}

impl NnError {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        NnError::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn at_layer(self, index: usize, kind: &LayerSpec) -> Self {
        NnError::AtLayer {
            index,
            kind: kind.name().to_string(),
            source: Box::new(self),
        }
    }
}
