//! Detection of intentionally (adversarial) and unintentionally (corruption)
//! modified images, independent of the image class.
//!
//! The pipeline builds a vision-transformer classifier, derives an embedding
//! detector from it, trains the detector with a multi-center MMD separation
//! loss over aligned quintuples of (original, attack-1, attack-2,
//! corruption-1, corruption-2) images, then attaches a small classification
//! head for 2/3/5-class intent detection. Evaluation reports per-noise
//! classifier degradation and detector accuracy for both seen and unseen
//! noise types.
//!
//! Crate layout mirrors the pipeline stages:
//!
//! - [`mmd`] — RBF kernels and biased MMD² estimators (value + gradients)
//! - [`loss`] — learnable centers and the composite separation loss
//! - [`nn`] — tensor layers with explicit forward caches and backward passes
//! - [`model`] — backbone/classifier/detector assembly and checkpoints
//! - [`attack`] — gradient-based intentional modifications
//! - [`corrupt`] — statistical unintentional modifications
//! - [`data`] — dataset ingestion, quintuple assembly, persistence
//! - [`train`] — the three training stages
//! - [`eval`] — metrics tables, embedding dumps, attention overlays
//!
//! Batch-level work is data-parallel via rayon when the default `parallel`
//! feature is enabled; disabling it yields a dependency-free sequential
//! build with identical numerics.

pub mod attack;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mmd;
pub mod model;
pub mod nn;
pub mod par;
pub mod train;

pub use error::{Error, Result};
