//! Non-autoregressive end-to-end image-to-speech synthesis.

pub mod dataset;
pub mod encoder;
mod error;
pub mod eval;
pub mod expansion;
pub mod melgen;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
