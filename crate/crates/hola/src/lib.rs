//! File formats, the synthetic data generator and the command line for the
//! HOLA audio-visual deepfake detector in `hola-core`.

mod binio;
pub mod checkpoint;
pub mod cli;
pub mod clip;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod report;
pub mod synth;

pub use error::{Error, FormatError, Result};
