//! File formats, benchmarking and the `fastsal` command line on top of the
//! `fastsal-core` engine.

pub mod archive;
pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod pnm;
pub mod table;

pub use error::{Error, Result};
pub use fastsal_core as core;
