use serde::{Deserialize, Serialize};

use super::sample::MultiModSample;
use super::schema::{Schema, TaskKind};
use crate::error::{Error, Result};

/// Samples conforming to one schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub timesteps: usize,
    /// Task whose labels drive stratified splitting and missingness injection.
    pub stratify_task: Option<String>,
    pub samples: Vec<MultiModSample>,
    /// Synthetic spec hash or source-file digest.
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.timesteps == 0 {
            return Err(Error::contract("dataset must have at least one timestep"));
        }
        if let Some(task) = &self.stratify_task {
            self.schema.task_index(task)?;
        }
        for s in &self.samples {
            s.validate(&self.schema, self.timesteps)?;
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            timesteps: self.timesteps,
            stratify_task: self.stratify_task.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Keeps only the listed tasks (targets are re-indexed accordingly).
    pub fn select_tasks(&self, task_indices: &[usize]) -> Dataset {
        let schema = self.schema.with_tasks(task_indices);
        let stratify_task = self
            .stratify_task
            .clone()
            .filter(|t| schema.tasks.iter().any(|s| &s.name == t));
        Dataset {
            schema,
            timesteps: self.timesteps,
            stratify_task,
            samples: self
                .samples
                .iter()
                .map(|s| MultiModSample {
                    targets: task_indices.iter().map(|&i| s.targets[i].clone()).collect(),
                    ..s.clone()
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Index of the stratification task, defaulting to the first classification task.
    pub fn stratify_index(&self) -> Result<usize> {
        match &self.stratify_task {
            Some(name) => self.schema.task_index(name),
            None => self
                .schema
                .tasks
                .iter()
                .position(|t| t.kind.is_classification())
                .ok_or_else(|| Error::contract("dataset has no classification task to stratify on")),
        }
    }

    /// Class labels of the stratification task, read at the last timestep.
    pub fn stratify_labels(&self) -> Result<Vec<usize>> {
        let task = self.stratify_index()?;
        let kind = self.schema.tasks[task].kind;
        if !kind.is_classification() {
            return Err(Error::contract(format!(
                "stratification task {} is not a classification task",
                self.schema.tasks[task].name
            )));
        }
        let last = self.timesteps - 1;
        self.samples
            .iter()
            .map(|s| {
                s.target(task, last)
                    .map(|v| v as usize)
                    .ok_or_else(|| {
                        Error::contract(format!("sample {} lacks a stratification label", s.id))
                    })
            })
            .collect()
    }

    pub fn is_binary(&self, task: usize) -> bool {
        self.schema.tasks[task].kind == TaskKind::Binary
    }

    /// Count of missing feature cells: absent vectors contribute their full width.
    pub fn missing_entry_count(&self) -> usize {
        self.samples
            .iter()
            .flat_map(|s| s.data.iter())
            .flat_map(|step| step.iter().zip(&self.schema.modalities))
            .map(|(v, m)| match v {
                None => m.dim,
                Some(v) => v.iter().filter(|x| x.is_nan()).count(),
            })
            .sum()
    }
}
