//! nnuzoo: a self-contained zoo of nested-U segmentation architectures
//! (CNN, Transformer, and state-space variants) with its own autodiff tensor
//! core, deterministic training loop, and benchmark/report harness.

pub mod blocks;
pub mod models;
pub mod check;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod testdata;

pub use error::{Error, Result};
pub use tensor::{Dtype, Gradients, Graph, Param, Parameterized, Scalar, Tensor, Var};
