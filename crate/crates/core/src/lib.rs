//! Compact saliency prediction engine.
//!
//! An asymmetric U-Net with a MobileNetV2-style encoder, channel-reducing
//! skip connections, central difference convolutions in the decoder and a
//! 2D fully-connected center-bias branch, together with exact parameter and
//! FLOPs accounting, the standard saliency metric suite and a small
//! training loop. Everything here is pure computation; file formats and the
//! command line live in the `fastsal` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod cdc;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
