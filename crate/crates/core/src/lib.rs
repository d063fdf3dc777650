//! Multi-task porcelain artifact classification toolkit.
//!
//! Classifies porcelain images along four simultaneous axes (dynasty, ware,
//! glaze, type) with a shared convolutional backbone and four task heads.
//! The crate covers the whole experiment lifecycle: taxonomy, manifest
//! loading, deterministic splits, preprocessing and augmentation, model
//! construction for four backbone families, the summed cross-entropy
//! objective, training with best-checkpoint selection, evaluation metrics,
//! and report/curve exports.

pub mod dataset;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod objective;
pub mod reports;
pub mod rng;
pub mod taxonomy;
pub mod tensor;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
pub use taxonomy::{build_taxonomy, Task, TaskSpec, TaskTaxonomy, TASKS};
pub use tensor::Tensor;
