//! Sequential encoding with skip semantics, and decoding of every state.

use serde::{Deserialize, Serialize};

use super::modules::{decode, Prediction};
use super::network::MultiModN;
use super::stack::StackCache;
use crate::data::MultiModSample;
use crate::error::{Error, Result};
use crate::numerics::DropoutPlan;

/// Encoder indices in the order they are applied at each timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub order: Vec<usize>,
}

impl EncodingPlan {
    /// Every encoder in model order.
    pub fn full(model: &MultiModN) -> Self {
        Self {
            order: (0..model.encoders.len()).collect(),
        }
    }

    pub fn from_modalities(model: &MultiModN, names: &[&str]) -> Result<Self> {
        Ok(Self {
            order: names
                .iter()
                .map(|n| model.encoder_index(n))
                .collect::<Result<_>>()?,
        })
    }

    /// This plan minus one encoder.
    pub fn without(&self, encoder: usize) -> Self {
        Self {
            order: self.order.iter().copied().filter(|&e| e != encoder).collect(),
        }
    }

    fn validate(&self, n_encoders: usize) -> Result<()> {
        match self.order.iter().find(|&&e| e >= n_encoders) {
            Some(bad) => Err(Error::contract(format!(
                "plan names encoder {bad}, model has {n_encoders}"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StepKind {
    Initial,
    Encoded { encoder: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub timestep: usize,
    pub kind: StepKind,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub timestep: usize,
    pub encoder: usize,
}

/// Every state visited while encoding one sample. `steps[0]` is the initial
/// state; skipped encoders leave no step and are listed in `skipped`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub steps: Vec<TrajectoryStep>,
    pub skipped: Vec<SkipRecord>,
    /// `slots[t][i]` indexes the step holding the state after the `i`-th plan
    /// slot of timestep `t`, whether that slot encoded or skipped.
    pub slots: Vec<Vec<usize>>,
    /// Step index of the last state of each timestep.
    pub timestep_end: Vec<usize>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn encoded_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn final_state(&self) -> &[f64] {
        &self.steps.last().expect("trajectory holds the initial state").state
    }

    /// States after each plan slot of `timestep`, preceded by the state the
    /// timestep started from. Skipped slots repeat the previous state.
    pub fn slot_states(&self, timestep: usize) -> Vec<&[f64]> {
        let start = if timestep == 0 {
            0
        } else {
            self.timestep_end[timestep - 1]
        };
        std::iter::once(start)
            .chain(self.slots[timestep].iter().copied())
            .map(|i| self.steps[i].state.as_slice())
            .collect()
    }
}

/// Forward caches aligned with `StateTrajectory::steps` (`None` at step 0).
pub(crate) type EncoderCaches = Vec<Option<StackCache>>;

pub(crate) fn run_sequence(
    model: &MultiModN,
    sample: &MultiModSample,
    plan: &EncodingPlan,
    dropout: &mut DropoutPlan,
    keep_caches: bool,
) -> Result<(StateTrajectory, EncoderCaches)> {
    plan.validate(model.encoders.len())?;
    if let Some(seq) = &sample.encoding_sequence {
        if seq.len() != sample.data.len() {
            return Err(Error::contract(format!(
                "sample {}: encoding_sequence length {} differs from data length {}",
                sample.id,
                seq.len(),
                sample.data.len()
            )));
        }
        for order in seq {
            (EncodingPlan { order: order.clone() }).validate(model.encoders.len())?;
        }
    }

    let mut steps = vec![TrajectoryStep {
        timestep: 0,
        kind: StepKind::Initial,
        state: model.initial_state.clone(),
    }];
    let mut caches: EncoderCaches = vec![None];
    let mut skipped = Vec::new();
    let mut slots = Vec::with_capacity(sample.data.len());
    let mut timestep_end = Vec::with_capacity(sample.data.len());

    for t in 0..sample.data.len() {
        let order = match &sample.encoding_sequence {
            Some(seq) => &seq[t],
            None => &plan.order,
        };
        let mut slot_idx = Vec::with_capacity(order.len());
        for &e in order {
            match sample.modality(t, e) {
                Some(x) => {
                    let prev = &steps.last().expect("non-empty").state;
                    let (next, cache) = model.encoders[e].forward(prev, x, dropout)?;
                    steps.push(TrajectoryStep {
                        timestep: t,
                        kind: StepKind::Encoded { encoder: e },
                        state: next,
                    });
                    caches.push(keep_caches.then_some(cache));
                }
                None => skipped.push(SkipRecord {
                    timestep: t,
                    encoder: e,
                }),
            }
            slot_idx.push(steps.len() - 1);
        }
        slots.push(slot_idx);
        timestep_end.push(steps.len() - 1);
    }

    Ok((
        StateTrajectory {
            steps,
            skipped,
            slots,
            timestep_end,
        },
        caches,
    ))
}

/// Applies the plan's encoders to each timestep's available modalities,
/// threading the state across timesteps. A sample's own `encoding_sequence`,
/// when present, replaces the plan.
pub fn forward_sequence(
    model: &MultiModN,
    sample: &MultiModSample,
    plan: &EncodingPlan,
    dropout: &mut DropoutPlan,
) -> Result<StateTrajectory> {
    run_sequence(model, sample, plan, dropout, false).map(|(t, _)| t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub timestep: usize,
    pub kind: StepKind,
    /// One prediction per decoder, in model order.
    pub predictions: Vec<Prediction>,
}

/// Predictions of every decoder at every recorded state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub tasks: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

pub fn predict_trajectory(model: &MultiModN, trajectory: &StateTrajectory) -> Result<PredictionGrid> {
    let rows = trajectory
        .steps
        .iter()
        .map(|step| {
            Ok(PredictionRow {
                timestep: step.timestep,
                kind: step.kind,
                predictions: model
                    .decoders
                    .iter()
                    .map(|d| decode(d, &step.state))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PredictionGrid {
        tasks: model.decoders.iter().map(|d| d.task.clone()).collect(),
        rows,
    })
}

/// Final-state predictions at the end of `timestep`, in eval mode.
pub fn predict_at(model: &MultiModN, sample: &MultiModSample, timestep: usize) -> Result<Vec<Prediction>> {
    if timestep >= sample.timesteps() {
        return Err(Error::contract(format!(
            "timestep {timestep} out of range for sample {} with {} timesteps",
            sample.id,
            sample.timesteps()
        )));
    }
    let traj = forward_sequence(model, sample, &EncodingPlan::full(model), &mut DropoutPlan::eval())?;
    let state = &traj.steps[traj.timestep_end[timestep]].state;
    model.decoders.iter().map(|d| decode(d, state)).collect()
}
