use serde::{Deserialize, Serialize};

use super::schema::{Schema, TaskKind};
use crate::error::{Error, Result};

/// One data point: per-timestep, per-modality optional feature vectors plus
/// per-task targets.
///
/// A modality is missing at a timestep when its vector is absent or contains
/// any NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModSample {
    pub id: String,
    /// `data[timestep][modality]`.
    pub data: Vec<Vec<Option<Vec<f64>>>>,
    /// `targets[task]`: one value for static tasks, one per timestep otherwise.
    /// `None` marks a target that is not valid at that point.
    pub targets: Vec<Vec<Option<f64>>>,
    /// Optional per-timestep encoder order overriding the model's plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding_sequence: Option<Vec<Vec<usize>>>,
}

impl MultiModSample {
    pub fn timesteps(&self) -> usize {
        self.data.len()
    }

    /// Feature vector of `modality` at `timestep` when present and NaN-free.
    pub fn modality(&self, timestep: usize, modality: usize) -> Option<&[f64]> {
        let v = self.data.get(timestep)?.get(modality)?.as_deref()?;
        if v.iter().any(|x| x.is_nan()) {
            None
        } else {
            Some(v)
        }
    }

    pub fn is_present(&self, timestep: usize, modality: usize) -> bool {
        self.modality(timestep, modality).is_some()
    }

    /// Target of `task` valid at `timestep`.
    pub fn target(&self, task: usize, timestep: usize) -> Option<f64> {
        let values = self.targets.get(task)?;
        if values.len() == 1 {
            values[0]
        } else {
            values.get(timestep).copied().flatten()
        }
    }

    /// Marks `modality` missing at every timestep.
    pub fn erase_modality(&mut self, modality: usize) {
        for step in &mut self.data {
            if let Some(slot) = step.get_mut(modality) {
                *slot = None;
            }
        }
    }

    pub fn missing_count(&self) -> usize {
        self.data
            .iter()
            .flat_map(|step| step.iter())
            .filter(|v| match v {
                None => true,
                Some(v) => v.iter().any(|x| x.is_nan()),
            })
            .count()
    }

    pub fn validate(&self, schema: &Schema, timesteps: usize) -> Result<()> {
        let ctx = |msg: String| Error::contract(format!("sample {}: {msg}", self.id));
        if self.data.len() != timesteps {
            return Err(ctx(format!(
                "{} timesteps, dataset declares {timesteps}",
                self.data.len()
            )));
        }
        for (t, step) in self.data.iter().enumerate() {
            if step.len() != schema.modalities.len() {
                return Err(ctx(format!(
                    "timestep {t} holds {} modalities, schema declares {}",
                    step.len(),
                    schema.modalities.len()
                )));
            }
            for (m, v) in step.iter().enumerate() {
                if let Some(v) = v {
                    let dim = schema.modalities[m].dim;
                    if v.len() != dim {
                        return Err(Error::shape(
                            format!("sample {} modality {} at timestep {t}", self.id, schema.modalities[m].name),
                            dim,
                            v.len(),
                        ));
                    }
                }
            }
        }
        if let Some(seq) = &self.encoding_sequence {
            if seq.len() != self.data.len() {
                return Err(ctx(format!(
                    "encoding_sequence has {} entries but data has {}",
                    seq.len(),
                    self.data.len()
                )));
            }
            for order in seq {
                if let Some(&bad) = order.iter().find(|&&m| m >= schema.modalities.len()) {
                    return Err(ctx(format!("encoding_sequence names unknown encoder {bad}")));
                }
            }
        }
        if self.targets.len() != schema.tasks.len() {
            return Err(ctx(format!(
                "{} targets for {} tasks",
                self.targets.len(),
                schema.tasks.len()
            )));
        }
        for (task, values) in schema.tasks.iter().zip(&self.targets) {
            let expected = if task.per_timestep { timesteps } else { 1 };
            if values.len() != expected {
                return Err(ctx(format!(
                    "task {} carries {} target values, expected {expected}",
                    task.name,
                    values.len()
                )));
            }
            for v in values.iter().flatten() {
                task.kind
                    .validate_target(*v)
                    .map_err(|e| ctx(format!("task {}: {e}", task.name)))?;
            }
        }
        Ok(())
    }
}

/// Class label of a classification target.
pub fn class_of(kind: TaskKind, value: f64) -> usize {
    debug_assert!(kind.is_classification());
    value as usize
}
