//! Minimal neural-network stack: layers, loss, model container, SGD trainer.
//!
//! Everything here is plain dense math over [`crate::tensor::Tensor`]. The
//! split-execution machinery in [`crate::engine`] reuses these exact kernels —
//! the protocol changes *where* the bilinear ops run, never *what* they
//! compute.

pub mod layer;
pub mod loss;
pub mod model;
pub mod train;

pub use layer::{LayerSpec, LayerWeights};
pub use loss::{argmax, softmax_cross_entropy};
pub use model::{add_bias, bias_grad, GradSet, Model};
pub use train::{
    effective_epochs, epoch_order, evaluate, train_plaintext, EpochMetrics, TrainConfig,
    TrainReport,
};
