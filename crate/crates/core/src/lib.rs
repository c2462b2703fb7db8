//! Kinship verification and family retrieval over precomputed face embeddings.
//!
//! The pipeline mirrors a face-recognition workflow transplanted onto kinship:
//!
//! - [`embedding_store`]: the KEB1 embedding file, JSON Lines manifest and the
//!   image → person → family index built from them.
//! - [`similarity`]: cosine scoring and L2 normalization.
//! - [`pair_sampler`]: balanced validation pairs drawn uniformly over families.
//! - [`calibration`]: ROC/AUC, threshold selection at a target FPR or TPR,
//!   per-kin-type thresholds and accuracy reports.
//! - [`finetune`]: family-classification training of a linear adapter with
//!   SGD + momentum, warmup/cooldown, step milestones and gradient clipping.
//! - [`retrieval`]: probe-vs-gallery search with mean-embedding or
//!   score-aggregation policies, mAP and rank@K.
//! - [`synthetic`]: hierarchical Gaussian datasets with family structure.
//!
//! All randomness goes through [`rng`] so every result is a pure function of
//! its inputs and seed.

pub mod calibration;
pub mod embedding_store;
mod error;
pub mod finetune;
pub mod pair_sampler;
pub mod retrieval;
pub mod rng;
pub mod similarity;
pub mod synthetic;

pub use error::{Error, Result};
