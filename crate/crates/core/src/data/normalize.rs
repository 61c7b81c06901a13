use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Per-feature `[min, max]`, indexed `[modality][feature]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanges {
    pub modalities: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationWarning {
    pub modality: String,
    pub feature: usize,
    pub message: String,
}

impl FeatureRanges {
    /// Min/max over every non-missing value of `dataset`.
    pub fn fit(dataset: &Dataset) -> Result<(Self, Vec<NormalizationWarning>)> {
        let mut ranges: Vec<Vec<[f64; 2]>> = dataset
            .schema
            .modalities
            .iter()
            .map(|m| vec![[f64::INFINITY, f64::NEG_INFINITY]; m.dim])
            .collect();
        for s in &dataset.samples {
            for step in &s.data {
                for (m, v) in step.iter().enumerate() {
                    let Some(v) = v else { continue };
                    for (r, &x) in ranges[m].iter_mut().zip(v) {
                        if x.is_nan() {
                            continue;
                        }
                        r[0] = r[0].min(x);
                        r[1] = r[1].max(x);
                    }
                }
            }
        }
        let mut warnings = Vec::new();
        for (m, feats) in ranges.iter().enumerate() {
            let name = &dataset.schema.modalities[m].name;
            for (f, r) in feats.iter().enumerate() {
                if r[0] > r[1] {
                    return Err(Error::contract(format!(
                        "feature {f} of modality {name} has no observed value"
                    )));
                }
                if r[0] == r[1] {
                    warnings.push(NormalizationWarning {
                        modality: name.clone(),
                        feature: f,
                        message: format!("constant feature ({}) mapped to 0", r[0]),
                    });
                }
            }
        }
        Ok((Self { modalities: ranges }, warnings))
    }

    #[inline]
    pub fn scale(range: [f64; 2], x: f64) -> f64 {
        if x.is_nan() {
            return x;
        }
        let [lo, hi] = range;
        if hi <= lo {
            return 0.0;
        }
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Maps every present value into `[0, 1]`; out-of-range values are clipped.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.modalities.len() != dataset.schema.modalities.len() {
            return Err(Error::shape(
                "normalization ranges",
                format!("{} modalities", dataset.schema.modalities.len()),
                format!("{} modalities", self.modalities.len()),
            ));
        }
        for (r, m) in self.modalities.iter().zip(&dataset.schema.modalities) {
            if r.len() != m.dim {
                return Err(Error::shape(format!("ranges of modality {}", m.name), m.dim, r.len()));
            }
        }
        let mut out = dataset.clone();
        for s in &mut out.samples {
            for step in &mut s.data {
                for (m, v) in step.iter_mut().enumerate() {
                    if let Some(v) = v {
                        for (x, &r) in v.iter_mut().zip(&self.modalities[m]) {
                            *x = Self::scale(r, *x);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fits ranges on `dataset` and applies them.
pub fn minmax_normalize(
    dataset: &Dataset,
) -> Result<(Dataset, FeatureRanges, Vec<NormalizationWarning>)> {
    let (ranges, warnings) = FeatureRanges::fit(dataset)?;
    for w in &warnings {
        log::warn!("{}[{}]: {}", w.modality, w.feature, w.message);
    }
    Ok((ranges.apply(dataset)?, ranges, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::MultiModSample;
    use crate::data::schema::{ModalitySchema, Schema, TaskKind, TaskSchema};

    fn single_feature(values: &[Option<f64>]) -> Dataset {
        Dataset {
            schema: Schema {
                modalities: vec![ModalitySchema { name: "m".into(), dim: 1 }],
                tasks: vec![TaskSchema::new("y", TaskKind::Regression)],
            },
            timesteps: 1,
            stratify_task: None,
            samples: values
                .iter()
                .enumerate()
                .map(|(i, v)| MultiModSample {
                    id: i.to_string(),
                    data: vec![vec![v.map(|x| vec![x])]],
                    targets: vec![vec![Some(0.0)]],
                    encoding_sequence: None,
                })
                .collect(),
            provenance: String::new(),
        }
    }

    fn values(ds: &Dataset) -> Vec<Option<f64>> {
        ds.samples.iter().map(|s| s.data[0][0].as_ref().map(|v| v[0])).collect()
    }

    #[test]
    fn maps_to_unit_interval() {
        let ds = single_feature(&[Some(2.0), Some(4.0), None, Some(6.0)]);
        let (norm, ranges, warnings) = minmax_normalize(&ds).unwrap();
        assert_eq!(values(&norm), vec![Some(0.0), Some(0.5), None, Some(1.0)]);
        assert_eq!(ranges.modalities[0][0], [2.0, 6.0]);
        assert!(warnings.is_empty());
    }

    #[test]
    fn unit_feature_unchanged_and_idempotent() {
        let ds = single_feature(&[Some(0.0), Some(0.25), Some(1.0)]);
        let (once, _, _) = minmax_normalize(&ds).unwrap();
        assert_eq!(once, ds);
        let (twice, _, _) = minmax_normalize(&once).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn out_of_range_test_values_clip() {
        let train = single_feature(&[Some(2.0), Some(6.0)]);
        let test = single_feature(&[Some(0.0), Some(10.0), Some(6.0)]);
        let (ranges, _) = FeatureRanges::fit(&train).unwrap();
        assert_eq!(values(&ranges.apply(&test).unwrap()), vec![Some(0.0), Some(1.0), Some(1.0)]);
    }

    #[test]
    fn constant_feature_maps_to_zero_with_warning() {
        let ds = single_feature(&[Some(3.0), Some(3.0)]);
        let (norm, _, warnings) = minmax_normalize(&ds).unwrap();
        assert_eq!(values(&norm), vec![Some(0.0), Some(0.0)]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn all_missing_feature_is_an_error() {
        assert!(minmax_normalize(&single_feature(&[None, None])).is_err());
    }
}
