//! Named parameter views, gradient containers, global-norm clipping and the
//! central-difference gradient oracle.

use std::borrow::Cow;

use super::layer::LayerGradients;
use crate::error::{Error, Result};

/// Read-only view of one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamRef<'a> {
    pub name: Cow<'a, str>,
    pub values: &'a [f64],
}

impl<'a> ParamRef<'a> {
    pub fn new(name: impl Into<Cow<'a, str>>, values: &'a [f64]) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Anything with trainable tensors. `params` and `params_mut` must enumerate
/// the same tensors in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<ParamRef<'_>>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub values: Vec<f64>,
}

/// Gradients laid out exactly like the `Parameterized` value they belong to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGradients {
    pub entries: Vec<GradEntry>,
}

impl ParamGradients {
    pub fn zeros_like<P: Parameterized + ?Sized>(params: &P) -> Self {
        Self {
            entries: params
                .params()
                .into_iter()
                .map(|p| GradEntry {
                    name: p.name.into_owned(),
                    values: vec![0.0; p.values.len()],
                })
                .collect(),
        }
    }

    pub fn from_layers(layers: &[(&str, &LayerGradients)]) -> Self {
        let mut entries = Vec::with_capacity(layers.len() * 2);
        for (prefix, g) in layers {
            let name = |suffix: &str| {
                if prefix.is_empty() {
                    suffix.to_owned()
                } else {
                    format!("{prefix}.{suffix}")
                }
            };
            entries.push(GradEntry {
                name: name("weights"),
                values: g.weights.values().to_vec(),
            });
            entries.push(GradEntry {
                name: name("bias"),
                values: g.bias.clone(),
            });
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.values.as_slice())
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            for v in &mut e.values {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamGradients) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamGradients) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(
                "gradient layout",
                format!("{} tensors", self.entries.len()),
                format!("{} tensors", other.entries.len()),
            ));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.values.len() != b.values.len() {
                return Err(Error::shape(
                    format!("gradient tensor {}", a.name),
                    a.values.len(),
                    b.values.len(),
                ));
            }
        }
        Ok(())
    }

    /// Element-wise `|a − b| / max(|a|, |b|, 1e-6)`, maximised over all entries.
    pub fn max_relative_error(&self, other: &ParamGradients) -> f64 {
        assert!(self.check_layout(other).is_ok(), "gradient layouts differ");
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values))
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.values.iter().any(|v| !v.is_finite()))
            .map(|e| e.name.as_str())
    }
}

/// Scales every gradient by `max_norm / g` when the global L2 norm `g` exceeds
/// `max_norm`.
pub fn clip_by_global_norm(grads: &ParamGradients, max_norm: f64) -> Result<ParamGradients> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!(
            "clip max_norm must be positive, got {max_norm}"
        )));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric(format!("gradient of parameter {name}")));
    }
    let norm = grads.global_norm();
    let mut out = grads.clone();
    if norm > max_norm {
        out.scale(max_norm / norm);
    }
    Ok(out)
}

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad<P, F>(mut f: F, params: &P, eps: f64) -> Result<ParamGradients>
where
    P: Parameterized + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    let mut grads = ParamGradients::zeros_like(params);
    let mut probe = params.clone();
    for (t, entry) in grads.entries.iter_mut().enumerate() {
        for i in 0..entry.values.len() {
            let original = probe.params_mut()[t][i];
            probe.params_mut()[t][i] = original + eps;
            let plus = f(&probe)?;
            probe.params_mut()[t][i] = original - eps;
            let minus = f(&probe)?;
            probe.params_mut()[t][i] = original;
            entry.values[i] = (plus - minus) / (2.0 * eps);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone)]
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
                name: "g".into(),
                values,
            }],
        }
    }

    #[test]
    fn finite_diff_of_square() {
        let g = finite_diff_grad(|p: &Scalars| Ok(p.0[0] * p.0[0]), &Scalars(vec![3.0]), 1e-5)
            .unwrap();
        assert!((g.entries[0].values[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_of_constant_is_zero() {
        let g = finite_diff_grad(|_: &Scalars| Ok(4.2), &Scalars(vec![1.0, -2.0, 5.0]), 1e-5)
            .unwrap();
        assert!(g.entries[0].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_examples() {
        // norm 10 -> halved under max_norm 5
        let g = grads(vec![6.0, 8.0]);
        assert_eq!(clip_by_global_norm(&g, 5.0).unwrap(), grads(vec![3.0, 4.0]));
        // norm 3 -> unchanged
        let g = grads(vec![3.0, 0.0]);
        assert_eq!(clip_by_global_norm(&g, 5.0).unwrap(), g);
        let c = clip_by_global_norm(&grads(vec![3.0, 4.0]), 1.0).unwrap();
        assert!((c.entries[0].values[0] - 0.6).abs() < 1e-15);
        assert!((c.entries[0].values[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_rejects_non_finite_and_bad_norm() {
        let err = clip_by_global_norm(&grads(vec![f64::NAN]), 1.0).unwrap_err();
        assert!(err.to_string().contains('g'));
        assert!(clip_by_global_norm(&grads(vec![1.0]), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clip_bounds_norm_and_is_idempotent(
            values in prop::collection::vec(-100.0f64..100.0, 1..20),
            max_norm in 0.01f64..50.0,
        ) {
            let once = clip_by_global_norm(&grads(values), max_norm).unwrap();
            prop_assert!(once.global_norm() <= max_norm + 1e-9);
            let twice = clip_by_global_norm(&once, max_norm).unwrap();
            for (a, b) in once.entries[0].values.iter().zip(&twice.entries[0].values) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
