//! Sequence-labeling engine for surgical workflow recognition over per-frame
//! feature sequences.
//!
//! The crate is `no_std` (with `alloc`) and carries every numerical piece of
//! the pipeline: dense kernels with hand-written backward passes, the four
//! feature-space architectures (frame MLP, causal clip convolution, stacked
//! GRU, causal multi-stage TCN), losses, Adam, the training loop, video-level
//! metrics, group-level splitting and a synthetic workflow generator with
//! local/global ambiguity injection. File formats, the experiment harness and
//! the CLI live in the `swr` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod split;
pub mod suites;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{ModelKind, ModelSpec, ParamStore, Prediction};
