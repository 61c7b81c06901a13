use serde::{Deserialize, Serialize};

use super::params::{ParamGradients, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: Parameterized + ?Sized>(params: &P, config: AdamConfig) -> Result<Self> {
        for (name, b) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::contract(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        let zeros: Vec<Vec<f64>> = params
            .params()
            .iter()
            .map(|p| vec![0.0; p.values.len()])
            .collect();
        Ok(Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        })
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: Parameterized + ?Sized>(
    params: &mut P,
    grads: &ParamGradients,
    state: &mut AdamState,
) -> Result<()> {
    let mut tensors = params.params_mut();
    if tensors.len() != grads.entries.len() || tensors.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step tensor count",
            tensors.len(),
            format!(
                "{} gradients / {} moments",
                grads.entries.len(),
                state.first_moment.len()
            ),
        ));
    }
    for ((p, g), m) in tensors.iter().zip(&grads.entries).zip(&state.first_moment) {
        if p.len() != g.values.len() || p.len() != m.len() {
            return Err(Error::shape(
                format!("adam_step tensor {}", g.name),
                p.len(),
                g.values.len(),
            ));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    for (((p, g), m), v) in tensors
        .iter_mut()
        .zip(&grads.entries)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g.values[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::{GradEntry, ParamRef};

    #[derive(Clone, Debug, PartialEq)]
    struct Scalars(Vec<f64>);

    impl Parameterized for Scalars {
        fn params(&self) -> Vec<ParamRef<'_>> {
            vec![ParamRef::new("x", &self.0)]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    fn grads(values: Vec<f64>) -> ParamGradients {
        ParamGradients {
            entries: vec![GradEntry {
                name: "x".into(),
                values,
            }],
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Scalars(vec![1.5, -2.0]);
        let mut state = AdamState::new(&p, AdamConfig::default()).unwrap();
        state.first_moment[0] = vec![0.4, -0.2];
        adam_step(&mut p, &grads(vec![0.0, 0.0]), &mut state).unwrap();
        // moments decay; the update is nonzero only because of the seeded moment
        assert!((state.first_moment[0][0] - 0.36).abs() < 1e-15);

        let mut q = Scalars(vec![1.5, -2.0]);
        let mut fresh = AdamState::new(&q, AdamConfig::default()).unwrap();
        adam_step(&mut q, &grads(vec![0.0, 0.0]), &mut fresh).unwrap();
        assert_eq!(q, Scalars(vec![1.5, -2.0]));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Scalars(vec![0.0]);
        let config = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&p, config).unwrap();
        adam_step(&mut p, &grads(vec![2.0]), &mut state).unwrap();
        assert!((p.0[0] + 0.1).abs() < 1e-6, "{}", p.0[0]);
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let mut p = Scalars(vec![0.0]);
        let mut state = AdamState::new(&p, AdamConfig::default()).unwrap();
        assert_eq!(state.step, 0);
        adam_step(&mut p, &grads(vec![1.0]), &mut state).unwrap();
        adam_step(&mut p, &grads(vec![1.0]), &mut state).unwrap();
        assert_eq!(state.step, 2);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = Scalars(vec![0.3, 0.7]);
            let mut state = AdamState::new(&p, AdamConfig::default()).unwrap();
            for k in 0..5 {
                adam_step(&mut p, &grads(vec![0.1 * k as f64, -0.2]), &mut state).unwrap();
            }
            p
        };
        assert_eq!(run().0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   run().0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        let mut p = Scalars(vec![0.0, 0.0]);
        let mut state = AdamState::new(&p, AdamConfig::default()).unwrap();
        assert!(adam_step(&mut p, &grads(vec![1.0]), &mut state).is_err());
        assert_eq!(state.step, 0);
    }

    #[test]
    fn invalid_betas_rejected() {
        let p = Scalars(vec![0.0]);
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&p, bad).is_err());
    }
}
