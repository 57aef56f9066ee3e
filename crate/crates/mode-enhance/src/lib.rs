//! Single-microphone speech enhancement with a mixture of deep experts.
//!
//! Expert networks estimate spectral masks from noisy log-spectrum context
//! frames, a gating network weights them per frame from MFCC context
//! frames, and a bounded soft attenuation rule applies the combined mask to
//! the noisy spectrum. The crate carries the full training pipeline,
//! including unsupervised clustering-based pretraining, a synthetic corpus
//! for desk-scale experiments, and objective evaluation metrics.

pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod mask;
pub mod mode;
pub mod nn;
pub mod pretrain;
pub mod train;

pub use error::{Error, Result};
