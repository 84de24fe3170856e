//! Segmentation and morphology quantification of carbides in grayscale
//! micrographs.
//!
//! The pipeline runs threshold candidates and curation ([`masking`],
//! [`dataset`]), a small encoder-decoder network ([`unet`]), pixel metrics
//! ([`metrics`]), per-carbide geometry ([`morphology`]) and dataset-level
//! statistics ([`analytics`]). [`synth`] produces micrographs with exactly
//! known ground truth.

pub mod analytics;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod imageio;
pub mod masking;
pub mod metrics;
pub mod morphology;
pub mod synth;
pub mod unet;

pub use error::{Error, Result};
