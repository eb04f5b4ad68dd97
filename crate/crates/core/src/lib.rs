//! Graph convolutional networks, a small reverse-mode autodiff engine, and
//! attention-based layer-pair knowledge distillation between a frozen teacher
//! GCN and a smaller student.

// `!(x >= 0.0)` style checks reject NaN as well as negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abkd;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod gnn;
pub mod graph;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
