//! Performance-score synchronisation toolkit: chroma feature extraction,
//! classic and structure-aware dynamic time warping, a differentiable
//! soft-DTW divergence, toy-scale neural aligners with hand-rolled
//! backpropagation, and an evaluation harness.

pub mod dtw;
pub mod error;
pub mod eval;
pub mod features;
pub mod neural;
pub mod softdtw;
pub mod structure;

pub use error::{Error, Result};
