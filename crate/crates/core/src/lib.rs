//! Transformer machine translation with dynamic position encoding (DPE).
//!
//! DPE places extra encoder layers between the enriched source embeddings
//! and the translation encoder, and trains their outputs towards the
//! sinusoidal encodings of each word's position in target order (derived
//! from word alignments). The crate also ships the two-pass reordering
//! pipeline, a deterministic training harness, beam search, BLEU and a
//! synthetic-language testbed where target order is known exactly.

pub mod alignment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod decode;
pub mod dpe;
pub mod error;
pub mod experiment;
pub mod model;
pub mod train;

pub use error::{Error, ErrorClass, Result};
