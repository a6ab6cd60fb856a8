//! A small convolutional-network laboratory for studying staged feature
//! transfer across image domains, with a deconvnet-style backward
//! visualization path.
//!
//! The crate trains sequential networks (convolution / ReLU / max-pool /
//! fully-connected / dropout stacks) in pure `f64`, orchestrates the
//! compared learning processes (from scratch, single- and two-stage feature
//! transfer, fine-tuning baselines), evaluates them with confusion-matrix
//! metrics and robustness-slope regressions over training-set fractions,
//! and backprojects feature maps into input space through recorded
//! pooling/ReLU switches. Procedural texture generators provide the
//! natural-like, textural, and target domains at desk scale.
//!
//! Everything is deterministic for a fixed seed: one summation order,
//! seeded streams for every random decision, and bit-reproducible training.

pub mod check;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
