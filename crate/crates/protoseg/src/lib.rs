//! Std companion of `protoseg-core`: file formats, synthetic data, block
//! slicing, training, evaluation reports, timing and the command line.

pub mod ablate;
pub mod bench;
pub mod blocks;
pub mod checkpoint;
pub mod config;
mod error;
pub mod export;
pub mod format;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
