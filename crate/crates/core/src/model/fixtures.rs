//! Small models and samples shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{init_model, Architecture, MultiModN};
use crate::data::{ModalitySchema, MultiModSample, Schema, TaskKind, TaskSchema};

pub(crate) fn schema(dims: &[usize], kinds: &[TaskKind]) -> Schema {
    Schema {
        modalities: dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| ModalitySchema {
                name: format!("m{i}"),
                dim,
            })
            .collect(),
        tasks: kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| TaskSchema::new(format!("t{i}"), k))
            .collect(),
    }
}

pub(crate) fn model(dims: &[usize], kinds: &[TaskKind], state: usize, hidden: usize, seed: u64) -> MultiModN {
    init_model(&Architecture::new(schema(dims, kinds), state, hidden), seed).unwrap()
}

/// Random features and targets; `present[t][m]` selects available modalities.
pub(crate) fn sample(schema: &Schema, present: &[Vec<bool>], seed: u64) -> MultiModSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = present
        .iter()
        .map(|step| {
            schema
                .modalities
                .iter()
                .zip(step)
                .map(|(m, &p)| {
                    let v: Vec<f64> = (0..m.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    p.then_some(v)
                })
                .collect()
        })
        .collect();
    let targets = schema
        .tasks
        .iter()
        .map(|t| {
            let y = match t.kind {
                TaskKind::Binary => rng.random_range(0..2) as f64,
                TaskKind::Multiclass { classes } => rng.random_range(0..classes) as f64,
                TaskKind::Regression => rng.random_range(0.0..1.0),
            };
            vec![Some(y)]
        })
        .collect();
    MultiModSample {
        id: format!("x{seed}"),
        data,
        targets,
        encoding_sequence: None,
    }
}

pub(crate) fn all_present(modalities: usize, timesteps: usize) -> Vec<Vec<bool>> {
    vec![vec![true; modalities]; timesteps]
}
