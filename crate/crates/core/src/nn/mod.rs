//! Minimal dense-network engine: recorded forward passes, exact backprop and
//! a maskable Adam optimizer.

mod adam;
mod conv;
mod dense;
mod matrix;
mod snapshot;

pub use adam::{adam_step, AdamHyper, AdamState, MaskPlacement, ScalarAdam};
pub use conv::channel_mean_activation;
pub use dense::{
    ActivationRecord, BatchPass, DenseNet, Gradients, HiddenActivation, Layer, LayerGrad, NetMask, OutputHead,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use matrix::Matrix;
pub use snapshot::{Checkpoint, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
