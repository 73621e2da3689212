//! Salient instance segmentation.
//!
//! The pipeline runs in four stages: a multiscale refinement network predicts
//! a salient-region map and a salient-contour map; the contour maps drive a
//! hierarchical grouping that yields ranked object proposals; proposals are
//! screened against the salient region and reduced to a compact instance
//! set; a fully connected CRF assigns every pixel to one instance or to the
//! background. [`metrics`] implements the evaluation measures for each stage.

pub mod crf;
pub mod dataio;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod proposals;
pub mod selfcheck;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Probability clamp used by the cross-entropy loss.
pub const CE_EPS: f64 = 1e-7;
