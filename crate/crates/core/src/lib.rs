//! Online adaptation of pose-based video anomaly detectors.
//!
//! The crate is organised around a streaming loop: windows of tracked
//! skeletons are scored by a deployed detector, windows judged normal are
//! buffered, the detector is fine-tuned on each buffer, and the refined
//! weights replace the deployed ones two subsets later.
//!
//! - [`pose`]: frames, tracks, normalization, windowing and the stream file format.
//! - [`detectors`]: a reconstruction autoencoder and a diagonal Gaussian likelihood model.
//! - [`pipeline`]: the inference / collection / training loop with lagged weight swaps.
//! - [`metrics`]: ROC, PR, EER and retention.
//! - [`streamgen`]: a deterministic synthetic multi-domain pose-stream generator.
//! - [`experiment`]: the no-train / online / offline comparison protocol.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detectors;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod rng;
pub mod streamgen;

pub use error::{Error, Result};
