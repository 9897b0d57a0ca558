//! Squeeze-aggregated-excitation (SaE) residual networks on a small,
//! dependency-light tensor and autograd core.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`kernels`]: dense tensors and the numerical kernels.
//! - [`autograd`]: a tape, trainable [`Parameter`]s and a gradient checker.
//! - [`nn`]: layers, the SE and SaE channel gates and the bottleneck block.
//! - [`zoo`]: declarative architectures (ResNet-50 family and small variants).
//! - [`data`], [`train`]: datasets, batching, SGD and evaluation.
//! - [`cli`]: the `saenet` command line.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernels;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use autograd::{Mode, Module, Parameter, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
