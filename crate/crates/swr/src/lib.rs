//! File formats, experiment harness and report rendering around `swr-core`.

pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod features;
pub mod harness;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
