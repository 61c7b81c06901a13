//! Versioned JSON model documents.
//!
//! Layout: a header (`format_version`, `model_type`, `architecture`, `seed`,
//! `config_hash`) followed by one flat weight array per tensor in declaration
//! order. Floats are written in shortest round-trip decimal form, so a
//! save/load cycle is bit-exact.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::network::{init_model, Architecture, MultiModN};
use crate::error::{Error, Result};
use crate::numerics::Parameterized;

pub const FORMAT_VERSION: u32 = 1;
pub const MULTIMODN_TYPE: &str = "multimodn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument<A> {
    pub format_version: u32,
    pub model_type: String,
    pub architecture: A,
    pub seed: u64,
    pub config_hash: String,
    pub weights: Vec<WeightTensor>,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    model_type: String,
}

pub(crate) fn weights_of<P: Parameterized>(params: &P) -> Vec<WeightTensor> {
    params
        .params()
        .into_iter()
        .map(|p| WeightTensor {
            name: p.name.into_owned(),
            values: p.values.to_vec(),
        })
        .collect()
}

/// Copies document weights into `target`, which must already have the
/// document's topology.
pub(crate) fn fill_weights<P: Parameterized>(weights: &[WeightTensor], target: &mut P) -> Result<()> {
    let expected: Vec<(String, usize)> = target
        .params()
        .into_iter()
        .map(|p| (p.name.into_owned(), p.values.len()))
        .collect();
    if weights.len() != expected.len() {
        return Err(Error::format(
            None,
            format!(
                "weight tensor count: expected {}, found {}",
                expected.len(),
                weights.len()
            ),
        ));
    }
    for ((name, len), w) in expected.iter().zip(weights) {
        if &w.name != name {
            return Err(Error::format(
                None,
                format!("weight tensor name: expected {name}, found {}", w.name),
            ));
        }
        if w.values.len() != *len {
            return Err(Error::format(
                None,
                format!(
                    "weight count of {name}: expected {len}, found {}",
                    w.values.len()
                ),
            ));
        }
    }
    for (dst, w) in target.params_mut().into_iter().zip(weights) {
        dst.copy_from_slice(&w.values);
    }
    Ok(())
}

pub(crate) fn parse_document<A: DeserializeOwned>(text: &str, model_type: &str) -> Result<ModelDocument<A>> {
    let fmt = |e: serde_json::Error| Error::format(Some(e.line()), format!("model document: {e}"));
    let header: Header = serde_json::from_str(text).map_err(fmt)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            None,
            format!(
                "model format version {} unsupported (expected {FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    if header.model_type != model_type {
        return Err(Error::format(
            None,
            format!("model type {} where {model_type} was expected", header.model_type),
        ));
    }
    serde_json::from_str(text).map_err(fmt)
}

pub fn serialize_model(model: &MultiModN) -> Result<String> {
    let doc = ModelDocument {
        format_version: FORMAT_VERSION,
        model_type: MULTIMODN_TYPE.to_owned(),
        architecture: model.arch.clone(),
        seed: model.seed,
        config_hash: model.config_hash(),
        weights: weights_of(model),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn deserialize_model(text: &str) -> Result<MultiModN> {
    let doc: ModelDocument<Architecture> = parse_document(text, MULTIMODN_TYPE)?;
    let mut model = init_model(&doc.architecture, doc.seed)?;
    fill_weights(&doc.weights, &mut model)?;
    Ok(model)
}

/// Reads the `model_type` tag without parsing weights.
pub fn document_type(text: &str) -> Result<String> {
    let header: Header = serde_json::from_str(text)
        .map_err(|e| Error::format(Some(e.line()), format!("model document: {e}")))?;
    Ok(header.model_type)
}
