//! Deep-supervised objective, evaluation, and the Adam fit loop.

pub mod evaluate;
pub mod fit;
pub mod objective;

pub use evaluate::{evaluate, evaluate_per_state, evaluate_with_plan, score_task, EvalOptions, TimestepSelection};
pub use fit::{fit, pfusion_timestep, EpochRecord, FitReport, Learner, MetricSelector, TrainingConfig};
pub use objective::{
    compute_batch_grads, compute_sample_loss, mean_loss, sample_loss_and_grads, BatchContext, LossEntry,
    LossOptions, SampleLoss,
};
