//! Sequential modular multimodal networks.
//!
//! Modality-specific encoders update a shared fixed-size state one modality
//! at a time, skipping whatever is missing; task-specific decoders read any
//! intermediate state. The crate also carries a parallel-fusion baseline,
//! missingness injection, metrics, interpretability exports and the
//! architecture's modularity score.

pub mod baseline;
pub mod data;
pub mod error;
pub mod experiments;
pub mod interpret;
pub mod metrics;
pub mod missingness;
pub mod model;
pub mod modularity;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
