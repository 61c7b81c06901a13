//! Multi-state, multi-task loss and its exact gradient.
//!
//! Every decoder is applied at every included state and the per-(state, task)
//! losses are averaged. Gradients from each state flow back through the chain
//! of encoders that produced it; skipped encoders never appear in the chain
//! and so receive no gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MultiModSample, TaskKind};
use crate::error::{Error, Result};
use crate::model::trajectory::run_sequence;
use crate::model::{EncodingPlan, ModelGradients, MultiModN, StepKind};
use crate::numerics::loss::{bce_with_logits, softmax_cross_entropy, squared_error};
use crate::numerics::{DropoutPlan, ParamGradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Also supervise the initial state.
    pub include_step0_loss: bool,
    /// Only supervise the last state of the trajectory.
    pub final_state_only: bool,
    /// Per-task loss weights; `None` means unweighted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_weights: Option<Vec<f64>>,
    pub freeze_initial_state: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            include_step0_loss: true,
            final_state_only: false,
            task_weights: None,
            freeze_initial_state: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    /// Index into the trajectory's steps.
    pub step: usize,
    pub timestep: usize,
    pub task: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub total: f64,
    pub entries: Vec<LossEntry>,
}

/// Loss of one prediction given decoder logits, and its gradient w.r.t. them.
pub(crate) fn task_loss(kind: TaskKind, logits: &[f64], target: f64) -> Result<(f64, Vec<f64>)> {
    Ok(match kind {
        TaskKind::Binary => {
            let (l, g) = bce_with_logits(logits[0], target);
            (l, vec![g])
        }
        TaskKind::Multiclass { .. } => softmax_cross_entropy(logits, target as usize)?,
        TaskKind::Regression => {
            let (l, g) = squared_error(logits[0], target);
            (l, vec![g])
        }
    })
}

fn weight(options: &LossOptions, task: usize) -> f64 {
    options
        .task_weights
        .as_ref()
        .and_then(|w| w.get(task).copied())
        .unwrap_or(1.0)
}

fn check_schema(model: &MultiModN, options: &LossOptions) -> Result<()> {
    if let Some(w) = &options.task_weights {
        if w.len() != model.decoders.len() {
            return Err(Error::shape("task_weights", model.decoders.len(), w.len()));
        }
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::contract("task weights must be finite and non-negative"));
        }
    }
    Ok(())
}

fn sample_objective(
    model: &MultiModN,
    sample: &MultiModSample,
    plan: &EncodingPlan,
    options: &LossOptions,
    dropout: &mut DropoutPlan,
    want_grads: bool,
) -> Result<(SampleLoss, Option<ModelGradients>)> {
    check_schema(model, options)?;
    if sample.targets.len() != model.decoders.len() {
        return Err(Error::shape(
            format!("targets of sample {}", sample.id),
            model.decoders.len(),
            sample.targets.len(),
        ));
    }
    let (trajectory, enc_caches) = run_sequence(model, sample, plan, dropout, want_grads)?;
    let last = trajectory.steps.len() - 1;

    struct Head {
        step: usize,
        task: usize,
        weight: f64,
        grad_logits: Vec<f64>,
        cache: crate::model::StackCache,
    }
    let mut entries = Vec::new();
    let mut heads = Vec::new();
    for (j, step) in trajectory.steps.iter().enumerate() {
        if j == 0 && !options.include_step0_loss {
            continue;
        }
        if options.final_state_only && j != last {
            continue;
        }
        for (t, decoder) in model.decoders.iter().enumerate() {
            let w = weight(options, t);
            let Some(target) = sample.target(t, step.timestep) else { continue };
            if w == 0.0 {
                continue;
            }
            let (_, cache) = decoder.forward(&step.state, dropout)?;
            let (loss, grad_logits) = task_loss(decoder.kind, cache.logits(), target)?;
            entries.push(LossEntry {
                step: j,
                timestep: step.timestep,
                task: t,
                loss,
            });
            if want_grads {
                heads.push(Head {
                    step: j,
                    task: t,
                    weight: w,
                    grad_logits,
                    cache,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::contract(format!(
            "sample {} has no (state, task) pair with a valid target",
            sample.id
        )));
    }
    let total = match &options.task_weights {
        None => entries.iter().map(|e| e.loss).sum::<f64>() / entries.len() as f64,
        Some(_) => {
            let w: f64 = entries.iter().map(|e| weight(options, e.task)).sum();
            entries.iter().map(|e| weight(options, e.task) * e.loss).sum::<f64>() / w
        }
    };
    let loss = SampleLoss { total, entries };
    if !want_grads {
        return Ok((loss, None));
    }

    let weight_total: f64 = heads.iter().map(|h| h.weight).sum();
    let mut grads = ModelGradients::zeros_like(model);
    let state_size = model.state_size();
    let mut state_grads = vec![vec![0.0; state_size]; trajectory.steps.len()];
    for head in &heads {
        let scale = head.weight / weight_total;
        let g: Vec<f64> = head.grad_logits.iter().map(|v| v * scale).collect();
        let decoder = &model.decoders[head.task];
        let (g_state, layer_grads) = decoder.stack.backward_from_logits(&head.cache, &g)?;
        ModelGradients::accumulate_stack(&mut grads.decoders[head.task], &layer_grads);
        for (a, b) in state_grads[head.step].iter_mut().zip(&g_state) {
            *a += b;
        }
    }

    let mut carry = vec![0.0; state_size];
    for j in (0..trajectory.steps.len()).rev() {
        for (c, g) in carry.iter_mut().zip(&state_grads[j]) {
            *c += g;
        }
        match trajectory.steps[j].kind {
            StepKind::Encoded { encoder } => {
                let cache = enc_caches[j].as_ref().expect("caches kept for gradients");
                let (g_in, layer_grads) = model.encoders[encoder].stack.backward(cache, &carry)?;
                ModelGradients::accumulate_stack(&mut grads.encoders[encoder], &layer_grads);
                carry.copy_from_slice(&g_in[..state_size]);
            }
            StepKind::Initial => {
                if !options.freeze_initial_state {
                    grads.initial_state.copy_from_slice(&carry);
                }
            }
        }
    }
    Ok((loss, Some(grads)))
}

/// Loss of one sample under `plan`.
pub fn compute_sample_loss(
    model: &MultiModN,
    sample: &MultiModSample,
    plan: &EncodingPlan,
    options: &LossOptions,
    dropout: &mut DropoutPlan,
) -> Result<SampleLoss> {
    sample_objective(model, sample, plan, options, dropout, false).map(|(l, _)| l)
}

pub fn sample_loss_and_grads(
    model: &MultiModN,
    sample: &MultiModSample,
    plan: &EncodingPlan,
    options: &LossOptions,
    dropout: &mut DropoutPlan,
) -> Result<(SampleLoss, ModelGradients)> {
    sample_objective(model, sample, plan, options, dropout, true)
        .map(|(l, g)| (l, g.expect("gradients requested")))
}

/// Per-batch randomness: dropout and encoder-order shuffling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchContext {
    pub dropout_rate: f64,
    pub randomize_order: bool,
    pub seed: u64,
    pub train: bool,
}

impl BatchContext {
    pub fn eval() -> Self {
        Self {
            dropout_rate: 0.0,
            randomize_order: false,
            seed: 0,
            train: false,
        }
    }

    pub(crate) fn sample_seed(&self, position: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(position as u64 + 1)
    }

    pub(crate) fn dropout_for(&self, position: usize) -> Result<DropoutPlan> {
        if self.train {
            DropoutPlan::train(self.dropout_rate, self.sample_seed(position))
        } else {
            Ok(DropoutPlan::eval())
        }
    }
}

/// Mean loss and gradient over a batch. Samples are processed in parallel and
/// reduced in batch order, so the result does not depend on thread count.
pub fn compute_batch_grads(
    model: &MultiModN,
    batch: &[&MultiModSample],
    options: &LossOptions,
    ctx: &BatchContext,
) -> Result<(f64, ParamGradients)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let full = EncodingPlan::full(model);
    let per_sample: Vec<Result<(SampleLoss, ModelGradients)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut dropout = ctx.dropout_for(i)?;
            let plan = if ctx.train && ctx.randomize_order {
                let mut order = full.order.clone();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.sample_seed(i) ^ 0xA5A5));
                EncodingPlan { order }
            } else {
                full.clone()
            };
            sample_loss_and_grads(model, sample, &plan, options, &mut dropout)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = ModelGradients::zeros_like(model);
    for r in per_sample {
        let (loss, g) = r?;
        total += loss.total;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    let mut flat = grads.into_param_gradients(model);
    flat.scale(1.0 / n);
    Ok((total / n, flat))
}

/// Mean eval-mode loss over `samples` without gradients.
pub fn mean_loss(model: &MultiModN, samples: &[&MultiModSample], options: &LossOptions) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("mean loss over no samples"));
    }
    let full = EncodingPlan::full(model);
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            compute_sample_loss(model, s, &full, options, &mut DropoutPlan::eval()).map(|l| l.total)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}
