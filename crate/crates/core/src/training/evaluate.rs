use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskKind, TaskSchema};
use crate::error::{Error, Result};
use crate::metrics::{
    auroc, balanced_accuracy, macro_auroc, macro_balanced_accuracy, macro_over_tasks, mse,
    MetricValue, MetricsReport, TaskMetrics,
};
use crate::model::{decode, forward_sequence, EncodingPlan, MultiModN, Prediction};
use crate::numerics::DropoutPlan;

/// Which timestep(s) of a time series are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TimestepSelection {
    #[default]
    Last,
    At {
        timestep: usize,
    },
    /// Metrics computed per timestep, then averaged.
    Average,
}

impl TimestepSelection {
    pub fn timesteps(self, total: usize) -> Result<Vec<usize>> {
        match self {
            TimestepSelection::Last => Ok(vec![total - 1]),
            TimestepSelection::At { timestep } if timestep < total => Ok(vec![timestep]),
            TimestepSelection::At { timestep } => Err(Error::contract(format!(
                "evaluation timestep {timestep} outside 0..{total}"
            ))),
            TimestepSelection::Average => Ok((0..total).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub timesteps: TimestepSelection,
    /// Decision threshold for binary BAC.
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            timesteps: TimestepSelection::Last,
            threshold: 0.5,
        }
    }
}

/// Metrics for one task from paired predictions and targets. Undefined
/// metrics (single-class slices) are left out.
pub fn score_task(
    kind: TaskKind,
    predictions: &[Prediction],
    targets: &[f64],
    threshold: f64,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    if predictions.is_empty() {
        return Ok(out);
    }
    let keep = |name: &str, r: Result<f64>, out: &mut BTreeMap<String, f64>| match r {
        Ok(v) => {
            out.insert(name.to_owned(), v);
            Ok(())
        }
        Err(Error::UndefinedMetric(_)) => Ok(()),
        Err(e) => Err(e),
    };
    match kind {
        TaskKind::Binary => {
            let scores: Vec<f64> = predictions.iter().map(Prediction::score).collect();
            let labels: Vec<bool> = targets.iter().map(|&t| t == 1.0).collect();
            let hard: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
            keep("auroc", auroc(&scores, &labels), &mut out)?;
            keep("bac", balanced_accuracy(&hard, &labels), &mut out)?;
        }
        TaskKind::Multiclass { classes } => {
            let probs: Vec<Vec<f64>> = predictions
                .iter()
                .map(|p| p.probabilities().expect("classification prediction"))
                .collect();
            let labels: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
            let argmax: Vec<usize> = probs
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                        .0
                })
                .collect();
            keep("auroc", macro_auroc(&probs, &labels, classes), &mut out)?;
            keep("bac", macro_balanced_accuracy(&argmax, &labels, classes), &mut out)?;
        }
        TaskKind::Regression => {
            let preds: Vec<f64> = predictions.iter().map(Prediction::score).collect();
            keep("mse", mse(&preds, targets), &mut out)?;
        }
    }
    Ok(out)
}

/// Scores `predictions[timestep_slot][sample][task]` against dataset targets.
pub(crate) fn report_from_predictions(
    tasks: &[TaskSchema],
    dataset_task_index: &[usize],
    dataset: &Dataset,
    timesteps: &[usize],
    predictions: &[Vec<Vec<Prediction>>],
    threshold: f64,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for (k, task) in tasks.iter().enumerate() {
        let mut per_timestep: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (slot, &t) in timesteps.iter().enumerate() {
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            for (i, sample) in dataset.samples.iter().enumerate() {
                if let Some(y) = sample.target(dataset_task_index[k], t) {
                    preds.push(predictions[slot][i][k].clone());
                    targets.push(y);
                }
            }
            for (name, v) in score_task(task.kind, &preds, &targets, threshold)? {
                per_timestep.entry(name).or_default().push(v);
            }
        }
        let metrics = per_timestep
            .into_iter()
            .map(|(name, values)| Ok((name, MetricValue::point(macro_over_tasks(&values)?))))
            .collect::<Result<_>>()?;
        report.tasks.push(TaskMetrics {
            task: task.name.clone(),
            metrics,
        });
    }
    Ok(report)
}

fn check_model_schema(model: &MultiModN, dataset: &Dataset) -> Result<()> {
    if model.schema() != &dataset.schema {
        return Err(Error::contract(
            "dataset schema differs from the model's modalities/tasks".to_owned(),
        ));
    }
    Ok(())
}

/// Final-state metrics per task at the selected timestep(s).
pub fn evaluate(model: &MultiModN, dataset: &Dataset, options: &EvalOptions) -> Result<MetricsReport> {
    evaluate_with_plan(model, dataset, &EncodingPlan::full(model), options)
}

pub fn evaluate_with_plan(
    model: &MultiModN,
    dataset: &Dataset,
    plan: &EncodingPlan,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    check_model_schema(model, dataset)?;
    let timesteps = options.timesteps.timesteps(dataset.timesteps)?;
    let per_sample: Vec<Result<Vec<Vec<Prediction>>>> = dataset
        .samples
        .par_iter()
        .map(|s| {
            let traj = forward_sequence(model, s, plan, &mut DropoutPlan::eval())?;
            timesteps
                .iter()
                .map(|&t| {
                    let state = &traj.steps[traj.timestep_end[t]].state;
                    model.decoders.iter().map(|d| decode(d, state)).collect()
                })
                .collect()
        })
        .collect();
    let per_sample: Vec<Vec<Vec<Prediction>>> = per_sample.into_iter().collect::<Result<_>>()?;
    // regroup as [timestep][sample][task]
    let grouped: Vec<Vec<Vec<Prediction>>> = (0..timesteps.len())
        .map(|slot| per_sample.iter().map(|s| s[slot].clone()).collect())
        .collect();
    let index: Vec<usize> = (0..model.decoders.len()).collect();
    report_from_predictions(
        &model.schema().tasks,
        &index,
        dataset,
        &timesteps,
        &grouped,
        options.threshold,
    )
}

/// Metrics at every state index `0..=|plan|` (state after the first `i` plan
/// slots of the scored timestep; skipped slots repeat the previous state).
pub fn evaluate_per_state(
    model: &MultiModN,
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<Vec<MetricsReport>> {
    check_model_schema(model, dataset)?;
    let plan = EncodingPlan::full(model);
    let timesteps = options.timesteps.timesteps(dataset.timesteps)?;
    let slots = plan.order.len() + 1;
    // [sample][timestep slot][state index][task]
    let per_sample: Vec<Result<Vec<Vec<Vec<Prediction>>>>> = dataset
        .samples
        .par_iter()
        .map(|s| {
            let traj = forward_sequence(model, s, &plan, &mut DropoutPlan::eval())?;
            timesteps
                .iter()
                .map(|&t| {
                    let mut states = traj.slot_states(t);
                    // samples with their own encoding_sequence may differ in length
                    let last = *states.last().expect("start state");
                    states.resize(slots, last);
                    states
                        .into_iter()
                        .map(|state| model.decoders.iter().map(|d| decode(d, state)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let per_sample: Vec<_> = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    let index: Vec<usize> = (0..model.decoders.len()).collect();
    (0..slots)
        .map(|k| {
            let grouped: Vec<Vec<Vec<Prediction>>> = (0..timesteps.len())
                .map(|slot| per_sample.iter().map(|s| s[slot][k].clone()).collect())
                .collect();
            report_from_predictions(
                &model.schema().tasks,
                &index,
                dataset,
                &timesteps,
                &grouped,
                options.threshold,
            )
        })
        .collect()
}
