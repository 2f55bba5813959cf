//! Minimal dense-tensor engine with a reverse-mode tape.
//!
//! Covers exactly the layer set a DeepONet branch/trunk pair needs: dense,
//! strided 2-D convolution and its transpose, channel concatenation,
//! cropping, adaptive average pooling, ReLU / leaky ReLU / sigmoid, and the
//! mean-squared-error loss. Everything is generic over [`Real`] so the same
//! code runs in `f32` for training and `f64` for gradient verification.

mod conv;
mod error;
mod graph;
mod init;
mod optim;
mod param;
mod real;
mod tensor;

pub use conv::{conv_out_len, conv_transpose_out_len, Padding};
pub use error::TensorError;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use init::{glorot_uniform, Init};
pub use optim::{AdamConfig, AdamState};
pub use param::{ParamSet, Parameter};
pub use real::Real;
pub use tensor::Tensor;

#[cfg(feature = "gradcheck")]
pub mod gradcheck;
