//! Core of the HOLA audio-visual deepfake detector.
//!
//! Everything here is pure computation over `alloc` collections: a small
//! reverse-mode autodiff engine, the audio/video front end, dual masking,
//! the masked-reconstruction backbone, the hierarchical fusion head, the
//! training loops and the evaluation metrics. File formats, the synthetic
//! data generator and the command line live in the `hola` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod head;
pub mod masking;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod rng;
pub mod selftrain;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
