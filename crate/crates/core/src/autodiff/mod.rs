//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitives as they execute; [`Tape::backward`] walks the
//! record in reverse. Parameters live in a [`ParamStore`] and are bound onto a
//! fresh tape for each step.

pub mod kernels;
mod params;
mod tape;

pub use kernels::PoolKind;
pub use params::{forward_backward, sgd_step, Bindings, GradMap, Param, ParamGroup, ParamStore};
pub use tape::{softmax_row, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("internal error: node {node} references later node {parent}")]
    Cycle { node: usize, parent: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("no gradient for updatable parameter `{0}`")]
    MissingGradient(String),
}
