//! Dense layers with explicit forward caches and hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::dropout::DropoutPlan;
use super::matrix::Matrix;
use super::params::{ParamRef, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn apply(self, pre: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Activation::Relu => pre.iter().map(|&z| z.max(0.0)).collect(),
            Activation::Sigmoid => pre.iter().map(|&z| sigmoid(z)).collect(),
            Activation::Softmax => softmax(pre)?,
            Activation::Identity => pre.to_vec(),
        })
    }

    /// Vector-Jacobian product through the activation.
    pub fn backward(self, pre: &[f64], activated: &[f64], grad: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => pre
                .iter()
                .zip(grad)
                .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Sigmoid => activated
                .iter()
                .zip(grad)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
            Activation::Softmax => {
                let inner: f64 = activated.iter().zip(grad).map(|(p, g)| p * g).sum();
                activated
                    .iter()
                    .zip(grad)
                    .map(|(&p, &g)| p * (g - inner))
                    .collect()
            }
            Activation::Identity => grad.to_vec(),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `activation(W·x + b)` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(
                "DenseLayer bias",
                weights.rows(),
                bias.len(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
        let mut layer = Self::zeros(input, output, activation);
        for w in layer.weights.values_mut() {
            *w = dist.sample(rng);
        }
        layer
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.values().len() + self.bias.len()
    }
}

impl Parameterized for DenseLayer {
    fn params(&self) -> Vec<ParamRef<'_>> {
        vec![
            ParamRef::new("weights", self.weights.values()),
            ParamRef::new("bias", &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.values_mut(), &mut self.bias]
    }
}

/// Everything `dense_backward` needs from the forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub activated: Vec<f64>,
    pub mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGradients {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.output_dim(), layer.input_dim()),
            bias: vec![0.0; layer.output_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &LayerGradients) {
        for (a, b) in self.weights.values_mut().iter_mut().zip(other.weights.values()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

pub fn dense_forward(
    layer: &DenseLayer,
    input: &[f64],
    dropout: &mut DropoutPlan,
) -> Result<(Vec<f64>, DenseCache)> {
    if input.len() != layer.input_dim() {
        return Err(Error::shape(
            format!(
                "dense_forward ({}x{} layer)",
                layer.output_dim(),
                layer.input_dim()
            ),
            format!("input of length {}", layer.input_dim()),
            format!("input of length {}", input.len()),
        ));
    }
    let mut pre = layer.weights.matvec(input)?;
    for (z, b) in pre.iter_mut().zip(&layer.bias) {
        *z += b;
    }
    let activated = layer.activation.apply(&pre)?;
    let mask = dropout.draw_mask(activated.len());
    let output = match &mask {
        Some(m) => activated.iter().zip(m).map(|(a, k)| a * k).collect(),
        None => activated.clone(),
    };
    Ok((
        output,
        DenseCache {
            input: input.to_vec(),
            pre_activation: pre,
            activated,
            mask,
        },
    ))
}

fn check_cache(layer: &DenseLayer, cache: &DenseCache) -> Result<()> {
    if cache.input.len() != layer.input_dim() || cache.pre_activation.len() != layer.output_dim()
    {
        return Err(Error::contract(format!(
            "forward cache ({} in, {} out) does not belong to a {}x{} layer",
            cache.input.len(),
            cache.pre_activation.len(),
            layer.output_dim(),
            layer.input_dim()
        )));
    }
    Ok(())
}

pub fn dense_backward(
    layer: &DenseLayer,
    cache: &DenseCache,
    grad_output: &[f64],
) -> Result<(Vec<f64>, LayerGradients)> {
    check_cache(layer, cache)?;
    if grad_output.len() != layer.output_dim() {
        return Err(Error::shape(
            "dense_backward grad_output",
            layer.output_dim(),
            grad_output.len(),
        ));
    }
    let masked: Vec<f64> = match &cache.mask {
        Some(m) => grad_output.iter().zip(m).map(|(g, k)| g * k).collect(),
        None => grad_output.to_vec(),
    };
    let grad_pre = layer
        .activation
        .backward(&cache.pre_activation, &cache.activated, &masked);
    linear_backward(layer, cache, &grad_pre)
}

/// Backward through `W·x + b` only, given the gradient at the pre-activation.
/// Loss heads that differentiate with respect to logits enter here.
pub fn linear_backward(
    layer: &DenseLayer,
    cache: &DenseCache,
    grad_pre: &[f64],
) -> Result<(Vec<f64>, LayerGradients)> {
    check_cache(layer, cache)?;
    if grad_pre.len() != layer.output_dim() {
        return Err(Error::shape(
            "linear_backward grad_pre",
            layer.output_dim(),
            grad_pre.len(),
        ));
    }
    let cols = layer.input_dim();
    let mut weights = Matrix::zeros(layer.output_dim(), cols);
    {
        let w = weights.values_mut();
        for (r, &g) in grad_pre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dst, &x) in w[r * cols..(r + 1) * cols].iter_mut().zip(&cache.input) {
                *dst = g * x;
            }
        }
    }
    let grad_input = layer.weights.matvec_transposed(grad_pre)?;
    Ok((
        grad_input,
        LayerGradients {
            weights,
            bias: grad_pre.to_vec(),
        },
    ))
}
