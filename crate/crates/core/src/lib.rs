//! Clustering-free point-cloud instance segmentation from learned prototypes
//! and per-sample coefficients.
//!
//! The crate is `no_std` and only needs `alloc`. It carries everything that is
//! pure computation: a small reverse-mode autodiff engine with Adam, farthest
//! point sampling and kNN, the shared backbone, the prototype and coefficient
//! networks, mask assembly with NMS, the reciprocal training loss, and the
//! evaluation metrics together with block merging. File formats, timing and
//! the command line live in the `protoseg` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assembly;
pub mod backbone;
pub mod cloud;
pub mod coeffnet;
pub mod config;
mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod nn;
pub mod protoscore;
pub mod tensor;

pub use cloud::PointCloud;
pub use config::{ModelConfig, SamplingSpace};
pub use error::{Error, Result};
pub use model::ProtoSeg;
pub use tensor::{Graph, ParamId, ParamStore, Tensor, Var};
