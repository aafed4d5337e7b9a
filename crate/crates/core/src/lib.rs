//! Desk-scale text-to-(vocal + whole-body motion) token generation.
//!
//! The crate covers the modality tokenizers (part-wise motion VQ codecs and a
//! vocal-to-unit codec), the unified token space with interleaving, mixing
//! and decoupling, a text-conditioned decoder-only token model, the
//! evaluation metrics, and the dataset/CLI plumbing around them.

pub mod error;
pub mod jsonl;
pub mod lm;
pub mod metrics;
pub mod motion;
pub mod numerics;
pub mod pipeline;
pub mod tokens;
pub mod vocal;

pub use error::{Error, Result};
