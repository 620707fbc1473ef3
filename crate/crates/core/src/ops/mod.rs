//! Forward kernels and their analytic gradients, on plain tensors.
//!
//! The differentiable wrappers in [`crate::autodiff`] call into these.

mod conv;
mod gemm;
mod matrix;
mod norm;
mod pointwise;
mod pool;

pub use conv::{
    conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, ConvGrads, Padding,
};
pub use matrix::{concat_channels, matmul, split_channels, transpose};
pub use norm::{
    batchnorm, batchnorm_backward, NormCache, NormGrads, NormMode, BN_EPS, BN_MOMENTUM,
};
pub use pointwise::{
    activation, activation_backward, sigmoid, softmax, softmax_backward, Activation,
};
pub use pool::{
    max_pool_backward, max_pool_window, maxpool2d, nearest_upsample, resize_nearest,
    resize_nearest_backward,
};
