//! Dense tensors with tape-based reverse-mode gradients.
//!
//! Covers exactly the operations a multi-stage convolutional motion model
//! needs: strided and transposed convolution, batch normalisation, ReLU,
//! channel concatenation, clamping and nearest-neighbour upsampling, plus an
//! Adam optimiser and a finite-difference gradient checker. Custom
//! differentiable operations can be added from outside the crate through
//! [`Graph::record`] and the [`Backward`] trait.

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod param;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use graph::{Backward, Graph, Var};
pub use param::{he_uniform, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
