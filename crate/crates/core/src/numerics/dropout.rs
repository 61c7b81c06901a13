use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train time so
/// evaluation is an identity transform.
#[derive(Debug, Clone)]
pub struct DropoutPlan {
    rate: f64,
    mode: DropoutMode,
    seed: u64,
    rng: ChaCha8Rng,
}

impl DropoutPlan {
    pub fn new(rate: f64, mode: DropoutMode, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            mode,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn train(rate: f64, seed: u64) -> Result<Self> {
        Self::new(rate, DropoutMode::Train, seed)
    }

    pub fn eval() -> Self {
        Self {
            rate: 0.0,
            mode: DropoutMode::Eval,
            seed: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mode(&self) -> DropoutMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_active(&self) -> bool {
        self.mode == DropoutMode::Train && self.rate > 0.0
    }

    /// Draws a fresh multiplicative mask, or `None` when the plan is inactive.
    pub fn draw_mask(&mut self, len: usize) -> Option<Vec<f64>> {
        if !self.is_active() {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        Some(
            (0..len)
                .map(|_| {
                    if self.rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_plan_never_masks() {
        let mut plan = DropoutPlan::new(0.5, DropoutMode::Eval, 3).unwrap();
        assert!(plan.draw_mask(10).is_none());
        assert!(DropoutPlan::eval().draw_mask(4).is_none());
    }

    #[test]
    fn rate_one_is_rejected() {
        assert!(DropoutPlan::train(1.0, 0).is_err());
        assert!(DropoutPlan::train(-0.1, 0).is_err());
    }

    #[test]
    fn inverted_scaling_preserves_expectation() {
        // 3 standard errors over 20k masks of a single unit.
        let rate = 0.3;
        let mut plan = DropoutPlan::train(rate, 11).unwrap();
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| plan.draw_mask(1).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }
}
