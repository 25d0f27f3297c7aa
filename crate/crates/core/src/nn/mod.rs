//! Dense network substrate.
//!
//! Multi-layer perceptrons with optional batch normalization, hand-written
//! reverse-mode gradients, Adam/SGD, and the vector math shared by the
//! preference and self-predictive losses. Everything is `f64`.

mod activation;
mod checkpoint;
mod dense;
mod matrix;
mod optim;
mod vecmath;

pub use activation::{sigmoid, Activation};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use dense::{BatchNorm, Dense, DenseNet, Gradients, LayerGrads, LayerSpec};
pub use matrix::Matrix;
pub use optim::{Optimizer, OptimizerKind};
pub use vecmath::{cosine_similarity, cosine_similarity_grad, dot, l2_norm, Cosine, COSINE_EPS};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch{}: expected {expected}, found {found}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape {
        layer: Option<usize>,
        expected: usize,
        found: usize,
    },
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("non-finite parameter after optimizer step")]
    NonFinite,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
