use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass { classes: usize },
    Regression,
}

impl TaskKind {
    /// Width of the decoder's prediction layer.
    pub fn output_dim(self) -> usize {
        match self {
            TaskKind::Binary | TaskKind::Regression => 1,
            TaskKind::Multiclass { classes } => classes,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    pub fn validate_target(self, value: f64) -> Result<()> {
        let ok = match self {
            TaskKind::Binary => value == 0.0 || value == 1.0,
            TaskKind::Multiclass { classes } => {
                value >= 0.0 && value.fract() == 0.0 && (value as usize) < classes
            }
            TaskKind::Regression => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("target {value} invalid for {self:?} task")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySchema {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: TaskKind,
    /// Targets vary per timestep instead of being fixed per sample.
    #[serde(default)]
    pub per_timestep: bool,
}

impl TaskSchema {
    pub fn new(name: impl Into<String>, kind: TaskKind) -> Self {
        Self {
            name: name.into(),
            kind,
            per_timestep: false,
        }
    }
}

/// Ordered modalities and tasks shared by datasets and models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub modalities: Vec<ModalitySchema>,
    pub tasks: Vec<TaskSchema>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::contract("schema needs at least one modality"));
        }
        if self.tasks.is_empty() {
            return Err(Error::contract("schema needs at least one task"));
        }
        for m in &self.modalities {
            if m.dim == 0 {
                return Err(Error::contract(format!("modality {} has zero dim", m.name)));
            }
        }
        for t in &self.tasks {
            if let TaskKind::Multiclass { classes } = t.kind {
                if classes < 2 {
                    return Err(Error::contract(format!(
                        "multiclass task {} needs at least two classes",
                        t.name
                    )));
                }
            }
        }
        let mut names: Vec<&str> = self.modalities.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate modality names"));
        }
        let mut names: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate task names"));
        }
        Ok(())
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::contract(format!("unknown modality {name}")))
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::contract(format!("unknown task {name}")))
    }

    /// The same modalities restricted to a subset of tasks.
    pub fn with_tasks(&self, task_indices: &[usize]) -> Schema {
        Schema {
            modalities: self.modalities.clone(),
            tasks: task_indices.iter().map(|&i| self.tasks[i].clone()).collect(),
        }
    }
}
