//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Graphs are rebuilt for every sequence (define-by-run) and borrow a
//! [`ParamStore`] that outlives them. Gradients flow back into a separate
//! [`ParamGrads`] buffer so the store can stay shared and immutable while
//! graphs are alive.

mod gradcheck;
mod graph;
mod params;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, grad_check_with_bias, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, Op, LOG_FLOOR};
pub use params::{sgd_step, ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between node {left} {left_shape:?} and node {right} {right_shape:?}")]
    ShapeMismatch {
        op: &'static str,
        left: usize,
        left_shape: Vec<usize>,
        right: usize,
        right_shape: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for node {node} of shape {shape:?}")]
    IndexOutOfRange {
        node: usize,
        index: usize,
        shape: Vec<usize>,
    },
    #[error("{0} needs at least one operand")]
    EmptyOperands(&'static str),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("node {0} is not an input")]
    NotAnInput(usize),
    #[error("loss node {node} has shape {shape:?}, expected a scalar")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
}
