//! Word-level masked language model pretraining.
//!
//! The crate covers the whole pipeline: whitespace/punctuation word
//! segmentation and top-K vocabulary construction, a small transformer
//! encoder with its own reverse-mode autodiff, MLM training over a per-batch
//! sampled output vocabulary, projection of pretrained static embeddings into
//! the encoder space, and frequency-stratified evaluation.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod sampling;
pub mod training;
pub mod vocabulary;

pub use error::{Error, Result};
