use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::modules::{Decoder, Encoder};
use super::stack::Stack;
use crate::data::{Schema, TaskKind};
use crate::error::{Error, Result};
use crate::numerics::{Activation, GradEntry, LayerGradients, ParamGradients, ParamRef, Parameterized};

fn relu() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub schema: Schema,
    pub state_size: usize,
    pub hidden_size: usize,
    /// Activation of each encoder's state-producing layer.
    #[serde(default = "relu")]
    pub state_activation: Activation,
}

impl Architecture {
    pub fn new(schema: Schema, state_size: usize, hidden_size: usize) -> Self {
        Self {
            schema,
            state_size,
            hidden_size,
            state_activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.state_size == 0 {
            return Err(Error::contract("state_size must be at least 1"));
        }
        if self.hidden_size == 0 {
            return Err(Error::contract("hidden_size must be at least 1"));
        }
        if self.state_activation == Activation::Softmax {
            return Err(Error::contract("softmax is not a valid state activation"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("architecture serializes");
        hex::encode(Sha256::digest(&json))[..16].to_owned()
    }
}

fn output_activation(kind: TaskKind) -> Activation {
    match kind {
        TaskKind::Binary => Activation::Sigmoid,
        TaskKind::Multiclass { .. } => Activation::Softmax,
        TaskKind::Regression => Activation::Identity,
    }
}

/// Trainable initial state, ordered encoders and one decoder per task.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModN {
    pub arch: Architecture,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    pub encoders: Vec<Encoder>,
    pub decoders: Vec<Decoder>,
}

/// Deterministic initialisation: `s₀ ~ U(−0.1, 0.1)` and Glorot-uniform
/// layers, drawn in the order initial state, encoders, decoders.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<MultiModN> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = Uniform::new(-0.1, 0.1).expect("valid range");
    let initial_state = (0..arch.state_size).map(|_| s0.sample(&mut rng)).collect();
    let encoders = arch
        .schema
        .modalities
        .iter()
        .map(|m| Encoder {
            modality: m.name.clone(),
            input_dim: m.dim,
            stack: Stack::glorot(
                arch.state_size + m.dim,
                arch.hidden_size,
                arch.state_size,
                arch.state_activation,
                &mut rng,
            ),
        })
        .collect();
    let decoders = arch
        .schema
        .tasks
        .iter()
        .map(|t| Decoder {
            task: t.name.clone(),
            kind: t.kind,
            stack: Stack::glorot(
                arch.state_size,
                arch.hidden_size,
                t.kind.output_dim(),
                output_activation(t.kind),
                &mut rng,
            ),
        })
        .collect();
    Ok(MultiModN {
        arch: arch.clone(),
        seed,
        initial_state,
        encoders,
        decoders,
    })
}

impl MultiModN {
    /// Same topology with every parameter zero.
    pub fn zeroed(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            seed: 0,
            initial_state: vec![0.0; arch.state_size],
            encoders: arch
                .schema
                .modalities
                .iter()
                .map(|m| Encoder {
                    modality: m.name.clone(),
                    input_dim: m.dim,
                    stack: Stack::zeros(
                        arch.state_size + m.dim,
                        arch.hidden_size,
                        arch.state_size,
                        arch.state_activation,
                    ),
                })
                .collect(),
            decoders: arch
                .schema
                .tasks
                .iter()
                .map(|t| Decoder {
                    task: t.name.clone(),
                    kind: t.kind,
                    stack: Stack::zeros(
                        arch.state_size,
                        arch.hidden_size,
                        t.kind.output_dim(),
                        output_activation(t.kind),
                    ),
                })
                .collect(),
        })
    }

    pub fn state_size(&self) -> usize {
        self.arch.state_size
    }

    pub fn schema(&self) -> &Schema {
        &self.arch.schema
    }

    pub fn encoder_index(&self, modality: &str) -> Result<usize> {
        self.encoders
            .iter()
            .position(|e| e.modality == modality)
            .ok_or_else(|| Error::contract(format!("no encoder for modality {modality}")))
    }

    pub fn config_hash(&self) -> String {
        self.arch.hash()
    }
}

fn layer_names(prefix: &str, count: usize) -> Vec<[String; 2]> {
    (0..count)
        .map(|i| [format!("{prefix}.layer{i}.weights"), format!("{prefix}.layer{i}.bias")])
        .collect()
}

impl MultiModN {
    /// Parameter tensor names in `Parameterized` order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["initial_state".to_owned()];
        for e in &self.encoders {
            for pair in layer_names(&format!("encoder.{}", e.modality), e.stack.layers.len()) {
                names.extend(pair);
            }
        }
        for d in &self.decoders {
            for pair in layer_names(&format!("decoder.{}", d.task), d.stack.layers.len()) {
                names.extend(pair);
            }
        }
        names
    }
}

impl Parameterized for MultiModN {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut values: Vec<&[f64]> = vec![&self.initial_state];
        for stack in self
            .encoders
            .iter()
            .map(|e| &e.stack)
            .chain(self.decoders.iter().map(|d| &d.stack))
        {
            for layer in &stack.layers {
                values.push(layer.weights.values());
                values.push(&layer.bias);
            }
        }
        self.param_names()
            .into_iter()
            .zip(values)
            .map(|(name, v)| ParamRef::new(name, v))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.initial_state];
        for stack in self
            .encoders
            .iter_mut()
            .map(|e| &mut e.stack)
            .chain(self.decoders.iter_mut().map(|d| &mut d.stack))
        {
            for layer in &mut stack.layers {
                out.push(layer.weights.values_mut());
                out.push(&mut layer.bias);
            }
        }
        out
    }
}

/// Gradients structured like [`MultiModN`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub initial_state: Vec<f64>,
    pub encoders: Vec<Vec<LayerGradients>>,
    pub decoders: Vec<Vec<LayerGradients>>,
}

impl ModelGradients {
    pub fn zeros_like(model: &MultiModN) -> Self {
        let zeros = |s: &Stack| s.layers.iter().map(LayerGradients::zeros_like).collect();
        Self {
            initial_state: vec![0.0; model.state_size()],
            encoders: model.encoders.iter().map(|e| zeros(&e.stack)).collect(),
            decoders: model.decoders.iter().map(|d| zeros(&d.stack)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGradients) {
        for (a, b) in self.initial_state.iter_mut().zip(&other.initial_state) {
            *a += b;
        }
        for (mine, theirs) in self
            .encoders
            .iter_mut()
            .chain(self.decoders.iter_mut())
            .zip(other.encoders.iter().chain(other.decoders.iter()))
        {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.add_assign(b);
            }
        }
    }

    pub(crate) fn accumulate_stack(target: &mut [LayerGradients], grads: &[LayerGradients]) {
        for (a, b) in target.iter_mut().zip(grads) {
            a.add_assign(b);
        }
    }

    /// Flattens into the `Parameterized` layout of `model`.
    pub fn into_param_gradients(self, model: &MultiModN) -> ParamGradients {
        let names = model.param_names();
        let mut values: Vec<Vec<f64>> = vec![self.initial_state];
        for layer in self.encoders.into_iter().chain(self.decoders).flatten() {
            values.push(layer.weights.values().to_vec());
            values.push(layer.bias);
        }
        ParamGradients {
            entries: names
                .into_iter()
                .zip(values)
                .map(|(name, values)| GradEntry { name, values })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskKind;
    use crate::model::fixtures::{model, schema};

    #[test]
    fn same_seed_same_model() {
        let kinds = [TaskKind::Binary, TaskKind::Regression];
        assert_eq!(model(&[4, 5], &kinds, 6, 8, 11), model(&[4, 5], &kinds, 6, 8, 11));
        assert_ne!(model(&[4, 5], &kinds, 6, 8, 11), model(&[4, 5], &kinds, 6, 8, 12));
    }

    #[test]
    fn parameter_count_by_shape_arithmetic() {
        let m = model(&[45, 45], &[TaskKind::Binary, TaskKind::Binary, TaskKind::Regression], 20, 32, 0);
        let layer = |i: usize, o: usize| i * o + o;
        let encoder = layer(20 + 45, 32) + layer(32, 32) + layer(32, 20);
        let decoder = layer(20, 32) + layer(32, 32) + layer(32, 1);
        assert_eq!(m.param_count(), 20 + 2 * encoder + 3 * decoder);
        assert_eq!(m.param_count(), 12959);
    }

    #[test]
    fn param_names_are_unique_and_aligned() {
        let m = model(&[3, 2], &[TaskKind::Multiclass { classes: 3 }], 4, 5, 0);
        let names = m.param_names();
        let params = m.params();
        assert_eq!(names.len(), params.len());
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(params[0].name, "initial_state");
        assert_eq!(params[1].name, "encoder.m0.layer0.weights");
    }

    #[test]
    fn initial_state_in_range_and_glorot_bounded() {
        let m = model(&[7], &[TaskKind::Binary], 9, 10, 5);
        assert!(m.initial_state.iter().all(|v| v.abs() < 0.1));
        let w = &m.encoders[0].stack.layers[0].weights;
        let bound = (6.0 / (16.0 + 10.0_f64)).sqrt();
        assert!(w.values().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn empty_schema_and_zero_state_rejected() {
        assert!(init_model(&Architecture::new(schema(&[], &[TaskKind::Binary]), 4, 4), 0).is_err());
        assert!(init_model(&Architecture::new(schema(&[3], &[]), 4, 4), 0).is_err());
        assert!(init_model(&Architecture::new(schema(&[3], &[TaskKind::Binary]), 0, 4), 0).is_err());
    }
}
