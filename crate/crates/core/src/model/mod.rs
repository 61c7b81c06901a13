//! The sequential modular network: initial state, encoders, decoders.

pub mod document;
#[cfg(test)]
pub(crate) mod fixtures;
pub mod modules;
pub mod network;
pub mod stack;
pub mod trajectory;

pub use document::{deserialize_model, document_type, serialize_model, ModelDocument, FORMAT_VERSION};
pub use modules::{decode, encode_step, Decoder, Encoder, Prediction};
pub use network::{init_model, Architecture, ModelGradients, MultiModN};
pub use stack::{Stack, StackCache};
pub use trajectory::{
    forward_sequence, predict_at, predict_trajectory, EncodingPlan, PredictionGrid, PredictionRow,
    SkipRecord, StateTrajectory, StepKind, TrajectoryStep,
};
