//! Noise-injected fine-tuning of a small byte-level decoder and lossless
//! parallel decoding (Jacobi iteration, prompt-lookup retrieval and
//! token-tree verification) on top of it.

pub mod data;
pub mod decode;
mod error;
pub mod model;
pub mod msn;
pub mod numerics;

pub use error::{Error, Result};
