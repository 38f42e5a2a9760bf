//! Minimal reverse-mode automatic differentiation over dense arrays, with the
//! convolutional layer set, optimizers, finite-difference checker, and
//! checkpoint container used by the proactive detection pipeline.

mod checkpoint;
mod error;
mod graph;
mod gradcheck;
mod kernels;
mod layers;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry, CheckpointError};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_inputs, relative_error, EntryError, GradCheckReport};
pub use graph::{BatchStats, Graph, OpStats, Var};
pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, Linear, Mode};
pub use optim::{optimizer_step, OptimizerKind, OptimizerSpec};
pub use params::{MomentState, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{numel, Tensor};

/// Logistic function, numerically stable for large `|v|`.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    graph::sigmoid(v)
}
