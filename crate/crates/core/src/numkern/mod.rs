//! Differentiable numerical kernels with hand-written backward passes.
//!
//! Everything is 64-bit. Layers keep their parameters in [`Param`]s and expose
//! `forward`/`backward` pairs; networks compose them explicitly rather than
//! through a generic autodiff graph.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod gemm;
pub mod gradcheck;
pub mod linear;
pub mod param;
pub mod tensor;

pub use activation::{leaky_relu, leaky_relu_backward, leaky_relu_backward_slice, leaky_relu_slice, sigmoid, LEAKY_SLOPE};
pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNorm1d, BnCache, Mode};
pub use checkpoint::{Checkpoint, NamedArray};
pub use conv::{conv1d_backward, conv1d_forward, conv_out_len, conv_transpose_out_len, Conv1d, ConvGrads, ConvTranspose1d};
pub use gradcheck::{grad_check, grad_check_indices, GradCheckReport};
pub use linear::Linear;
pub use param::{HasParams, Param};
pub use tensor::Tensor3;
