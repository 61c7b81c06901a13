//! Parallel-fusion baseline: modality vectors concatenated in fixed order,
//! missing spans zero-padded, one single-task decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, ModalitySchema, MultiModSample, TaskKind, TaskSchema};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::document::{fill_weights, parse_document, weights_of, ModelDocument, FORMAT_VERSION};
use crate::model::{Prediction, Stack};
use crate::numerics::{Activation, DropoutPlan, ParamGradients, ParamRef, Parameterized};
use crate::training::evaluate::{report_from_predictions, EvalOptions};
use crate::training::objective::{task_loss, BatchContext};

pub const PFUSION_TYPE: &str = "pfusion";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PFusionArchitecture {
    /// Expected modalities, in concatenation order.
    pub modalities: Vec<ModalitySchema>,
    pub task: TaskSchema,
    pub hidden_size: usize,
}

impl PFusionArchitecture {
    pub fn input_dim(&self) -> usize {
        self.modalities.iter().map(|m| m.dim).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() || self.modalities.iter().any(|m| m.dim == 0) {
            return Err(Error::contract("P-Fusion needs modalities with positive dims"));
        }
        if self.hidden_size == 0 {
            return Err(Error::contract("hidden_size must be at least 1"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("architecture serializes");
        hex::encode(Sha256::digest(&json))[..16].to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PFusion {
    pub arch: PFusionArchitecture,
    pub seed: u64,
    pub stack: Stack,
}

pub fn init_pfusion(arch: &PFusionArchitecture, seed: u64) -> Result<PFusion> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match arch.task.kind {
        TaskKind::Binary => Activation::Sigmoid,
        TaskKind::Multiclass { .. } => Activation::Softmax,
        TaskKind::Regression => Activation::Identity,
    };
    Ok(PFusion {
        arch: arch.clone(),
        seed,
        stack: Stack::glorot(
            arch.input_dim(),
            arch.hidden_size,
            arch.task.kind.output_dim(),
            out,
            &mut rng,
        ),
    })
}

impl Parameterized for PFusion {
    fn params(&self) -> Vec<ParamRef<'_>> {
        self.stack
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    ParamRef::new(format!("decoder.layer{i}.weights"), l.weights.values()),
                    ParamRef::new(format!("decoder.layer{i}.bias"), &l.bias[..]),
                ]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.stack.layers {
            out.push(l.weights.values_mut());
            out.push(&mut l.bias);
        }
        out
    }
}

impl PFusion {
    /// Concatenated input at `timestep`; missing modalities become zero spans.
    pub fn input(&self, sample: &MultiModSample, timestep: usize) -> Result<Vec<f64>> {
        let step = sample.data.get(timestep).ok_or_else(|| {
            Error::contract(format!("sample {} has no timestep {timestep}", sample.id))
        })?;
        if step.len() != self.arch.modalities.len() {
            return Err(Error::shape(
                format!("modalities of sample {}", sample.id),
                self.arch.modalities.len(),
                step.len(),
            ));
        }
        let mut x = Vec::with_capacity(self.arch.input_dim());
        for (m, spec) in self.arch.modalities.iter().enumerate() {
            match sample.modality(timestep, m) {
                Some(v) if v.len() != spec.dim => {
                    return Err(Error::shape(
                        format!("modality {} of sample {}", spec.name, sample.id),
                        spec.dim,
                        v.len(),
                    ))
                }
                Some(v) => x.extend_from_slice(v),
                None => x.extend(std::iter::repeat_n(0.0, spec.dim)),
            }
        }
        Ok(x)
    }

    fn forward_input(&self, x: &[f64], dropout: &mut DropoutPlan) -> Result<(Prediction, crate::model::StackCache)> {
        let (_, cache) = self.stack.forward(x, dropout)?;
        let p = Prediction::from_logits(self.arch.task.kind, cache.logits())?;
        Ok((p, cache))
    }

    fn task_index(&self, dataset: &Dataset) -> Result<usize> {
        if dataset.schema.modalities != self.arch.modalities {
            return Err(Error::contract("dataset modalities differ from the P-Fusion spec"));
        }
        let idx = dataset.schema.task_index(&self.arch.task.name)?;
        if dataset.schema.tasks[idx].kind != self.arch.task.kind {
            return Err(Error::contract(format!(
                "task {} has a different kind in the dataset",
                self.arch.task.name
            )));
        }
        Ok(idx)
    }
}

pub fn pfusion_forward(model: &PFusion, sample: &MultiModSample, timestep: usize) -> Result<Prediction> {
    let x = model.input(sample, timestep)?;
    model.forward_input(&x, &mut DropoutPlan::eval()).map(|(p, _)| p)
}

/// Mean task loss over the samples of `batch` that carry a target at
/// `timestep`, with its gradient.
pub fn pfusion_loss_and_grads(
    model: &PFusion,
    batch: &[&MultiModSample],
    task: usize,
    timestep: usize,
    ctx: &BatchContext,
) -> Result<(f64, ParamGradients)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let per_sample: Vec<Result<Option<(f64, Vec<crate::numerics::LayerGradients>)>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let Some(y) = s.target(task, timestep) else { return Ok(None) };
            let x = model.input(s, timestep)?;
            let mut dropout = ctx.dropout_for(i)?;
            let (_, cache) = model.forward_input(&x, &mut dropout)?;
            let (loss, g) = task_loss(model.arch.task.kind, cache.logits(), y)?;
            let (_, grads) = model.stack.backward_from_logits(&cache, &g)?;
            Ok(Some((loss, grads)))
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut acc: Vec<crate::numerics::LayerGradients> = model
        .stack
        .layers
        .iter()
        .map(crate::numerics::LayerGradients::zeros_like)
        .collect();
    for r in per_sample {
        if let Some((loss, grads)) = r? {
            total += loss;
            count += 1;
            for (a, b) in acc.iter_mut().zip(&grads) {
                a.add_assign(b);
            }
        }
    }
    if count == 0 {
        return Err(Error::contract("no sample in the batch has a valid target"));
    }
    let mut flat = ParamGradients::zeros_like(model);
    for (i, layer) in acc.iter().enumerate() {
        flat.entries[2 * i].values.copy_from_slice(layer.weights.values());
        flat.entries[2 * i + 1].values.copy_from_slice(&layer.bias);
    }
    flat.scale(1.0 / count as f64);
    Ok((total / count as f64, flat))
}

pub fn evaluate_pfusion(model: &PFusion, dataset: &Dataset, options: &EvalOptions) -> Result<MetricsReport> {
    let task = model.task_index(dataset)?;
    let timesteps = options.timesteps.timesteps(dataset.timesteps)?;
    let grouped: Vec<Vec<Vec<Prediction>>> = timesteps
        .iter()
        .map(|&t| {
            dataset
                .samples
                .par_iter()
                .map(|s| pfusion_forward(model, s, t).map(|p| vec![p]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    report_from_predictions(
        std::slice::from_ref(&model.arch.task),
        &[task],
        dataset,
        &timesteps,
        &grouped,
        options.threshold,
    )
}

pub(crate) fn resolve_task(model: &PFusion, dataset: &Dataset) -> Result<usize> {
    model.task_index(dataset)
}

pub fn serialize_pfusion(model: &PFusion) -> Result<String> {
    let doc = ModelDocument {
        format_version: FORMAT_VERSION,
        model_type: PFUSION_TYPE.to_owned(),
        architecture: model.arch.clone(),
        seed: model.seed,
        config_hash: model.arch.hash(),
        weights: weights_of(model),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn deserialize_pfusion(text: &str) -> Result<PFusion> {
    let doc: ModelDocument<PFusionArchitecture> = parse_document(text, PFUSION_TYPE)?;
    let mut model = init_pfusion(&doc.architecture, doc.seed)?;
    fill_weights(&doc.weights, &mut model)?;
    Ok(model)
}
