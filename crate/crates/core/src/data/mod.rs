//! Dataset contract, ingestion, normalization, splitting and synthetic data.

pub mod dataset;
pub mod io;
pub mod normalize;
pub mod sample;
pub mod schema;
pub mod split;
pub mod synth;

pub use dataset::Dataset;
pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use normalize::{minmax_normalize, FeatureRanges, NormalizationWarning};
pub use sample::MultiModSample;
pub use schema::{ModalitySchema, Schema, TaskKind, TaskSchema};
pub use split::{stratified_folds, stratified_kfold, Fold};
pub use synth::{generate_synthetic, generate_synthetic_with_truth, SynthModality, SynthSpec, SynthTask, SynthTruth};
