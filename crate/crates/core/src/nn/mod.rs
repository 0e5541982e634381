//! Differentiable building blocks: convolution, pooling, resampling,
//! activations, dropout and group normalization.

mod activation;
mod conv;
mod dropout;
mod norm;
mod pool;
mod resample;

pub use activation::sigmoid_scalar;
pub use conv::{conv_output_extent, Conv2dGeometry};
pub use norm::GroupNormParams;
pub use pool::Pool2d;
