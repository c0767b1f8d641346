//! Hierarchical joint domain and intent classification with out-of-scope
//! rejection.
//!
//! The crate is layered bottom-up:
//!
//! - [`diffcore`]: a small define-by-run reverse-mode graph over dense
//!   vectors with the handful of primitives the model needs.
//! - [`encoder`]: tokenization, a trainable hashed n-gram encoder, and the
//!   `EMB1` store of precomputed utterance vectors.
//! - [`model`]: domain block, intent block, the two softmax heads and the
//!   structural variants.
//! - [`training`]: joint loss with a learnable mixing weight, AdamW, the
//!   warmup schedule and early stopping.
//! - [`data`]: dataset loading, label spaces, count validation and a
//!   synthetic fixture generator.
//! - [`evaluation`]: threshold post-processing, metrics, sweeps and
//!   representation export.
//! - [`checkpoint`]: the `HJM1` binary checkpoint format.
//! - [`cli`]: the command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod model;
pub mod training;

pub use error::{Error, Result};
