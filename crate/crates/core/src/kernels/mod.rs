//! Pure numerical kernels. Every function here is a function of its inputs
//! only; the autograd tape in [`crate::autograd`] wires them together.

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_backward, conv2d_with, ConvGrads, ConvSpec, ConvStrategy};
pub use elementwise::{add, channel_scale, concat_channels, relu, sigmoid, softmax_rows, split_channels};
pub use linalg::{linear, matmul};
pub use loss::cross_entropy;
pub use norm::{batchnorm2d, BnMode, RunningStats};
pub use pool::{global_avg_pool, max_pool2d, MaxPoolSpec};
