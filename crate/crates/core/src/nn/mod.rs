//! Minimal reverse-mode differentiation engine with the layers needed by the
//! Siamese pose regressor: convolution, max-pooling, spatial pyramid pooling,
//! ReLU, affine, concatenation and the Euclidean loss.

mod container;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod tensor;

use thiserror::Error;

pub use container::{read_container, write_container, NamedTensor, MAGIC};
pub use gradcheck::{grad_check, graph_objective, Evaluation, GradCheckConfig, GradCheckReport, InputReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{ConvSpec, PoolSpec, SppSpec};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature map {height}x{width} is smaller than the finest pyramid level {required}")]
    InputTooSmall { height: usize, width: usize, required: usize },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(usize),
    #[error("weight container corrupt: {0}")]
    ContainerCorrupt(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
