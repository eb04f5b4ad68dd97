//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Leaves are
//! created with [`Tape::param`] (trainable) or [`Tape::constant`]; every op
//! returns a [`Var`] handle, and [`Tape::backward`] walks the tape in strict
//! reverse insertion order accumulating gradients into shared inputs.
//!
//! ```
//! use abkd_core::autodiff::Tape;
//! use abkd_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
//! let loss = tape.sum_squares(w);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
//! ```

mod gradcheck;
mod tape;

pub use gradcheck::{compare_gradients, finite_diff_grad, GradComparison};
pub use tape::{Gradients, Tape, Var};
