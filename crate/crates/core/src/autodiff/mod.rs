//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The engine records a graph of [`Value`]s as primitives are applied. Reverse
//! rules are expressed with the same primitives, so gradients returned with
//! `create_graph = true` can be differentiated again. This is what lets
//! [`functional_step`] produce parameters that are still functions of
//! whatever the inner loss depended on (for example a data perturbation),
//! and an outer loss can then be differentiated through the update.

pub mod gradcheck;
mod graph;
mod ops;
mod params;
mod value;

use thiserror::Error;

pub use graph::{grad, grad_with};
pub use ops::{group_softmax, l1_distance, mse};
pub use params::{functional_step, Optimizer, OptimizerKind, ParamBlock};
pub use value::Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: no operands")]
    Empty { op: &'static str },
    #[error("expected a one-element value, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
