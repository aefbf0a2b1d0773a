//! Layer vocabulary for the baseline and task networks: 2-D convolution,
//! fully-connected, batch normalization, pooling and softmax cross-entropy.
//!
//! ReLU lives in [`crate::tensor::ops`] and is re-exported here.

mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;

pub use batchnorm::{batchnorm, BatchNormParams, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_output_extent, Conv2dParams};
pub use dense::{dense, DenseParams};
pub use loss::{argmax_rows, softmax_xent};
pub use pool::{global_avg_pool, max_pool2d};

pub use crate::tensor::ops::relu;
