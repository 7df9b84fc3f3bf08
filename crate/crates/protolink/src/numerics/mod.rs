//! Dense-tensor substrate with reverse-mode gradients.

pub mod check;
pub mod graph;
pub mod tensor;

use thiserror::Error;

pub use check::{
    collect_grads, compare_gradients, grad_check, grad_check_mixed, rel_err, GradCheckEntry,
    GradCheckReport,
};
pub use graph::{Activation, Graph, NodeId};
pub use tensor::{ParamStore, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },
    #[error("id {id} out of range for table of {size} rows")]
    IdOutOfRange { id: usize, size: usize },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
}
