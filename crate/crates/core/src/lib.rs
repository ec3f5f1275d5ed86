//! Generative x-vectors: CCA fusion of i-vector and x-vector spaces, an
//! LDA + length-normalization + PLDA verification back-end, detection
//! metrics and a synthetic paired-embedding generator.

pub mod backend;
pub mod cca;
pub mod cli;
pub mod container;
pub mod embeddings;
pub mod error;
mod linalg;
pub mod metrics;
pub mod synthgen;
pub mod trials;

pub use error::{Error, Result};
