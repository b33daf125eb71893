//! Synthetic scene generation, a multimodal masked-language transformer and
//! the measurements used to study systematic generalization: per-attribute
//! in/out-of-distribution accuracy, dataset NMI, representation p-score, DCI
//! and cross-run correlations.

pub mod analysis;
pub mod container;
mod csvfmt;
pub mod error;
pub mod experiment;
pub mod latent;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod render;
pub mod report;
pub mod rng;
pub mod scenegen;
pub mod textgen;
pub mod trainer;

pub use error::{Error, Result};
