//! Generalizable differentiable architecture search at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, a seven-operation
//! cell search space with a two-cell supernet, the logistic / smooth-L1 /
//! generalization-loss objectives, a synthetic single-source benchmark with a
//! spurious background cue, the two-stage search/augment trainer, a numerical
//! primal-dual verifier for the linearized loss, and reporting utilities.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix `f64`,
//! which every experiment and tolerance in this crate assumes.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dual;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod scalar;
pub mod search_space;
pub mod supernet;
pub mod tensor;
pub mod trainer;

pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type Network64 = supernet::Network<f64>;
pub type Network32 = supernet::Network<f32>;
pub type ArchParams64 = supernet::ArchParams<f64>;
pub type DualInstance64 = dual::DualInstance<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
