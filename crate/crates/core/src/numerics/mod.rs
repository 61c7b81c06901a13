//! Dense layers, hand-written gradients, dropout, and Adam with clipping.

pub mod adam;
pub mod dropout;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dropout::{DropoutMode, DropoutPlan};
pub use layer::{
    dense_backward, dense_forward, linear_backward, sigmoid, softmax, Activation, DenseCache,
    DenseLayer, LayerGradients,
};
pub use matrix::Matrix;
pub use params::{
    clip_by_global_norm, finite_diff_grad, GradEntry, ParamGradients, ParamRef, Parameterized,
};
