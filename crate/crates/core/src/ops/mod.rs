//! Primitive tensor operations and their reverse-mode counterparts.

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod resample;

pub use conv::{conv2d, conv2d_backward, depthwise_conv2d, ConvGrads, ConvSpec};
pub use elementwise::{concat_channels, relu6, sigmoid, softplus};
pub use linear::{linear, linear_backward};
pub use norm::{batchnorm, batchnorm_backward, BnMode};
pub use resample::{max_pool2d, upsample, UpsampleMode};
