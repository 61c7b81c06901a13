use rand::Rng;

use crate::error::Result;
use crate::numerics::{
    dense_backward, dense_forward, linear_backward, Activation, DenseCache, DenseLayer,
    DropoutPlan, LayerGradients,
};

/// Two ReLU hidden layers followed by an output layer. Dropout touches only
/// the hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct StackCache {
    pub layers: Vec<DenseCache>,
}

impl StackCache {
    /// Pre-activation of the output layer.
    pub fn logits(&self) -> &[f64] {
        &self.layers.last().expect("non-empty stack").pre_activation
    }
}

impl Stack {
    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            layers: vec![
                DenseLayer::glorot(input, hidden, Activation::Relu, rng),
                DenseLayer::glorot(hidden, hidden, Activation::Relu, rng),
                DenseLayer::glorot(hidden, output, output_activation, rng),
            ],
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, output_activation: Activation) -> Self {
        Self {
            layers: vec![
                DenseLayer::zeros(input, hidden, Activation::Relu),
                DenseLayer::zeros(hidden, hidden, Activation::Relu),
                DenseLayer::zeros(hidden, output, output_activation),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty stack").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward(&self, input: &[f64], dropout: &mut DropoutPlan) -> Result<(Vec<f64>, StackCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        let mut no_dropout = DropoutPlan::eval();
        for (i, layer) in self.layers.iter().enumerate() {
            let plan = if i == last { &mut no_dropout } else { &mut *dropout };
            let (out, cache) = dense_forward(layer, &x, plan)?;
            caches.push(cache);
            x = out;
        }
        Ok((x, StackCache { layers: caches }))
    }

    pub fn backward(&self, cache: &StackCache, grad_output: &[f64]) -> Result<(Vec<f64>, Vec<LayerGradients>)> {
        let last = self.layers.len() - 1;
        let (g, top) = dense_backward(&self.layers[last], &cache.layers[last], grad_output)?;
        self.backward_hidden(cache, g, top)
    }

    /// Backward pass given the gradient at the output layer's pre-activation.
    pub fn backward_from_logits(&self, cache: &StackCache, grad_logits: &[f64]) -> Result<(Vec<f64>, Vec<LayerGradients>)> {
        let last = self.layers.len() - 1;
        let (g, top) = linear_backward(&self.layers[last], &cache.layers[last], grad_logits)?;
        self.backward_hidden(cache, g, top)
    }

    fn backward_hidden(
        &self,
        cache: &StackCache,
        mut grad: Vec<f64>,
        top: LayerGradients,
    ) -> Result<(Vec<f64>, Vec<LayerGradients>)> {
        let last = self.layers.len() - 1;
        let mut grads = vec![top];
        for i in (0..last).rev() {
            let (g, lg) = dense_backward(&self.layers[i], &cache.layers[i], &grad)?;
            grads.push(lg);
            grad = g;
        }
        grads.reverse();
        Ok((grad, grads))
    }
}
