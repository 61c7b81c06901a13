use serde::{Deserialize, Serialize};

use super::stack::{Stack, StackCache};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softmax, DropoutPlan};

/// Maps `concat(previous state, modality features)` to the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub modality: String,
    pub input_dim: usize,
    pub stack: Stack,
}

/// Maps a state to one task's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub task: String,
    pub kind: TaskKind,
    pub stack: Stack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    /// Probability of the positive class.
    Binary(f64),
    Multiclass(Vec<f64>),
    Regression(f64),
}

impl Prediction {
    pub fn from_logits(kind: TaskKind, logits: &[f64]) -> Result<Self> {
        Ok(match kind {
            TaskKind::Binary => Prediction::Binary(sigmoid(logits[0])),
            TaskKind::Multiclass { .. } => Prediction::Multiclass(softmax(logits)?),
            TaskKind::Regression => Prediction::Regression(logits[0]),
        })
    }

    /// Scalar summary: positive-class probability, last-class probability for
    /// multiclass, raw value for regression.
    pub fn score(&self) -> f64 {
        match self {
            Prediction::Binary(p) | Prediction::Regression(p) => *p,
            Prediction::Multiclass(probs) => *probs.last().expect("non-empty distribution"),
        }
    }

    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            Prediction::Binary(p) => Some(vec![1.0 - p, *p]),
            Prediction::Multiclass(probs) => Some(probs.clone()),
            Prediction::Regression(_) => None,
        }
    }
}

impl Encoder {
    pub fn state_size(&self) -> usize {
        self.stack.output_dim()
    }

    pub(crate) fn forward(
        &self,
        state: &[f64],
        x: &[f64],
        dropout: &mut DropoutPlan,
    ) -> Result<(Vec<f64>, StackCache)> {
        if state.len() != self.state_size() {
            return Err(Error::shape(
                format!("encoder {} state", self.modality),
                self.state_size(),
                state.len(),
            ));
        }
        if x.len() != self.input_dim {
            return Err(Error::shape(
                format!("encoder {} input", self.modality),
                self.input_dim,
                x.len(),
            ));
        }
        let mut input = Vec::with_capacity(state.len() + x.len());
        input.extend_from_slice(state);
        input.extend_from_slice(x);
        self.stack.forward(&input, dropout)
    }
}

impl Decoder {
    pub fn state_size(&self) -> usize {
        self.stack.input_dim()
    }

    pub(crate) fn forward(
        &self,
        state: &[f64],
        dropout: &mut DropoutPlan,
    ) -> Result<(Prediction, StackCache)> {
        if state.len() != self.state_size() {
            return Err(Error::shape(
                format!("decoder {} state", self.task),
                self.state_size(),
                state.len(),
            ));
        }
        let (_, cache) = self.stack.forward(state, dropout)?;
        let prediction = Prediction::from_logits(self.kind, cache.logits())?;
        Ok((prediction, cache))
    }
}

/// `new state = stack(concat(state, x))`.
pub fn encode_step(
    encoder: &Encoder,
    state: &[f64],
    x: &[f64],
    dropout: &mut DropoutPlan,
) -> Result<Vec<f64>> {
    encoder.forward(state, x, dropout).map(|(s, _)| s)
}

pub fn decode(decoder: &Decoder, state: &[f64]) -> Result<Prediction> {
    decoder
        .forward(state, &mut DropoutPlan::eval())
        .map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskKind;
    use crate::model::fixtures::model;
    use crate::model::MultiModN;

    fn zeroed(kinds: &[TaskKind]) -> MultiModN {
        MultiModN::zeroed(&model(&[3], kinds, 4, 5, 0).arch).unwrap()
    }

    #[test]
    fn zero_encoder_gives_zero_state() {
        let m = zeroed(&[TaskKind::Binary]);
        let s = encode_step(&m.encoders[0], &[1.0, -2.0, 3.0, 0.5], &[9.0, 9.0, 9.0], &mut DropoutPlan::eval()).unwrap();
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn random_encoder_preserves_state_size() {
        let m = model(&[3], &[TaskKind::Binary], 6, 5, 1);
        let s = encode_step(&m.encoders[0], &m.initial_state, &[0.1, 0.2, 0.3], &mut DropoutPlan::eval()).unwrap();
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn zero_decoders_give_neutral_predictions() {
        let m = zeroed(&[TaskKind::Binary, TaskKind::Multiclass { classes: 3 }, TaskKind::Regression]);
        let state = [0.3, -0.1, 2.0, 1.0];
        assert_eq!(decode(&m.decoders[0], &state).unwrap(), Prediction::Binary(0.5));
        match decode(&m.decoders[1], &state).unwrap() {
            Prediction::Multiclass(p) => assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15)),
            other => panic!("unexpected {other:?}"),
        }
        let mut reg = m.decoders[2].clone();
        reg.stack.layers[2].bias[0] = 0.7;
        assert_eq!(decode(&reg, &state).unwrap(), Prediction::Regression(0.7));
    }

    #[test]
    fn shape_errors() {
        let m = model(&[3], &[TaskKind::Binary], 4, 5, 1);
        assert!(matches!(
            encode_step(&m.encoders[0], &[0.0; 4], &[0.0; 2], &mut DropoutPlan::eval()),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(decode(&m.decoders[0], &[0.0; 3]), Err(Error::Shape { .. })));
    }
}
