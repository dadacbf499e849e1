//! Dense tensors with reverse-mode differentiation, the layers and optimizer
//! used to train every model in the workspace, and the training plumbing
//! around them (checkpoints, seeded randomness, configuration files).
//!
//! Everything numeric is generic over [`Scalar`]; `f32` and `f64` aliases are
//! provided at the crate root.

pub mod ckpt;
pub mod config;
pub mod conv;
mod dual;
mod error;
pub mod gradcheck;
mod graph;
pub mod infer;
pub mod nn;
mod ops;
pub mod optim;
mod rng;
mod scalar;
mod tensor;

pub use dual::Dual;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use ops::{BinaryKind, Unary};
pub use rng::{RngState, SeededRng};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
