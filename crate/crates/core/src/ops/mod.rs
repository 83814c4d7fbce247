//! Differentiable primitives. Every forward has a hand-written backward.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod pool;
pub mod sobel;

pub use activation::{
    relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, softmax_channels, softmax_channels_backward,
};
pub use batchnorm::{
    batchnorm, batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormCache, BatchNormGrads, Mode,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvKernel, ConvSpec, Padding};
pub use pool::{maxpool2x2, maxpool2x2_backward, upsample2x2, upsample2x2_backward, PoolIndices};
pub use sobel::{sobel_components, sobel_gradient_magnitude, sobel_gradient_magnitude_backward};
