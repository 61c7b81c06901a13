//! MAR and MNAR erasure of whole modalities, and the label-flipped condition.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingnessMode {
    None,
    /// Erasure drawn from all samples regardless of class.
    Mar,
    /// Erasure drawn only from samples of `target_class`.
    Mnar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub mode: MissingnessMode,
    pub modality: String,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    pub seed: u64,
}

impl MissingnessSpec {
    pub fn none(modality: impl Into<String>) -> Self {
        Self {
            mode: MissingnessMode::None,
            modality: modality.into(),
            rate: 0.0,
            target_class: None,
            seed: 0,
        }
    }

    pub fn mar(modality: impl Into<String>, rate: f64, seed: u64) -> Self {
        Self {
            mode: MissingnessMode::Mar,
            modality: modality.into(),
            rate,
            target_class: None,
            seed,
        }
    }

    pub fn mnar(modality: impl Into<String>, rate: f64, target_class: usize, seed: u64) -> Self {
        Self {
            mode: MissingnessMode::Mnar,
            modality: modality.into(),
            rate,
            target_class: Some(target_class),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::contract(format!(
                "missingness rate {} outside [0, 1]",
                self.rate
            )));
        }
        match (self.mode, self.target_class) {
            (MissingnessMode::Mnar, None) => Err(Error::contract("mnar missingness needs a target_class")),
            (MissingnessMode::Mnar, Some(c)) if c > 1 => Err(Error::contract(format!(
                "mnar target_class {c} is not a binary class"
            ))),
            (MissingnessMode::None | MissingnessMode::Mar, Some(_)) => {
                Err(Error::contract("target_class is only meaningful for mnar"))
            }
            _ => Ok(()),
        }
    }
}

/// Same spec aimed at the other binary class.
pub fn flip_spec(spec: &MissingnessSpec) -> Result<MissingnessSpec> {
    if spec.mode != MissingnessMode::Mnar {
        return Err(Error::contract("only mnar specs can be label-flipped"));
    }
    spec.validate()?;
    let class = spec.target_class.expect("validated mnar spec");
    Ok(MissingnessSpec {
        target_class: Some(1 - class),
        ..spec.clone()
    })
}

/// Indices of the samples `spec` erases, ascending.
pub fn select_erased(dataset: &Dataset, spec: &MissingnessSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    dataset.schema.modality_index(&spec.modality)?;
    let pool: Vec<usize> = match spec.mode {
        MissingnessMode::None => return Ok(Vec::new()),
        MissingnessMode::Mar => (0..dataset.len()).collect(),
        MissingnessMode::Mnar => {
            let task = dataset.stratify_index()?;
            if !dataset.is_binary(task) {
                return Err(Error::contract(format!(
                    "mnar needs a binary stratification task, {} is not",
                    dataset.schema.tasks[task].name
                )));
            }
            let class = spec.target_class.expect("validated mnar spec");
            dataset
                .stratify_labels()?
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c == class)
                .map(|(i, _)| i)
                .collect()
        }
    };
    let count = (spec.rate * pool.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<usize> = sample_indices(&mut rng, pool.len(), count)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Copy of `dataset` with the named modality erased at every timestep of the
/// selected samples. Feature values of other entries are untouched.
pub fn apply_missingness(dataset: &Dataset, spec: &MissingnessSpec) -> Result<Dataset> {
    let modality = dataset.schema.modality_index(&spec.modality)?;
    let erased = select_erased(dataset, spec)?;
    let mut out = dataset.clone();
    for i in erased {
        out.samples[i].erase_modality(modality);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};

    fn data(n: usize, seed: u64) -> Dataset {
        generate_synthetic(&SynthSpec {
            n_samples: n,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn missing_by_class(d: &Dataset, modality: usize) -> [(usize, usize); 2] {
        let mut out = [(0, 0); 2];
        for (s, c) in d.samples.iter().zip(d.stratify_labels().unwrap()) {
            out[c].1 += 1;
            if !s.is_present(0, modality) {
                out[c].0 += 1;
            }
        }
        out
    }

    #[test]
    fn rate_zero_and_mode_none_are_identity() {
        let d = data(200, 1);
        assert_eq!(apply_missingness(&d, &MissingnessSpec::mnar("m0", 0.0, 1, 3)).unwrap(), d);
        assert_eq!(apply_missingness(&d, &MissingnessSpec::none("m0")).unwrap(), d);
    }

    #[test]
    fn saturated_mnar_hits_exactly_one_class() {
        let d = data(300, 2);
        let out = apply_missingness(&d, &MissingnessSpec::mnar("m0", 1.0, 1, 3)).unwrap();
        let [c0, c1] = missing_by_class(&out, 0);
        assert_eq!(c0.0, 0);
        assert_eq!(c1.0, c1.1);
        assert!(out.samples.iter().all(|s| s.is_present(0, 1)));
    }

    #[test]
    fn half_of_class_is_erased_deterministically() {
        let d = data(2000, 3);
        let ones = d.stratify_labels().unwrap().iter().filter(|&&c| c == 1).count();
        let spec = MissingnessSpec::mnar("m1", 0.5, 1, 11);
        let a = apply_missingness(&d, &spec).unwrap();
        let [c0, c1] = missing_by_class(&a, 1);
        assert_eq!(c0.0, 0);
        assert_eq!(c1.0, (0.5 * ones as f64).round() as usize);
        assert_eq!(a, apply_missingness(&d, &spec).unwrap());
        assert_ne!(a, apply_missingness(&d, &spec.with_seed(12)).unwrap());
    }

    #[test]
    fn injection_changes_only_presence() {
        let d = data(400, 4);
        let out = apply_missingness(&d, &MissingnessSpec::mar("m0", 0.3, 5)).unwrap();
        for (a, b) in d.samples.iter().zip(&out.samples) {
            assert_eq!(a.targets, b.targets);
            assert_eq!(a.data[0][1], b.data[0][1]);
            if let Some(v) = &b.data[0][0] {
                assert_eq!(Some(v), a.data[0][0].as_ref());
            }
        }
        // the input is not modified
        assert_eq!(d.missing_entry_count(), 0);
    }

    #[test]
    fn mar_rates_agree_across_classes() {
        let d = data(4000, 6);
        let rate = 0.4;
        let out = apply_missingness(&d, &MissingnessSpec::mar("m0", rate, 9)).unwrap();
        for (missing, total) in missing_by_class(&out, 0) {
            let p = missing as f64 / total as f64;
            let se = (rate * (1.0 - rate) / total as f64).sqrt();
            assert!((p - rate).abs() < 3.0 * se, "class rate {p}");
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let spec = MissingnessSpec::mnar("m0", 0.8, 1, 2);
        let flipped = flip_spec(&spec).unwrap();
        assert_eq!(flipped, MissingnessSpec::mnar("m0", 0.8, 0, 2));
        assert_eq!(flip_spec(&flipped).unwrap(), spec);
        assert!(flip_spec(&MissingnessSpec::mar("m0", 0.8, 2)).is_err());
    }

    #[test]
    fn flipped_spec_erases_only_the_other_class() {
        let d = data(500, 8);
        let spec = flip_spec(&MissingnessSpec::mnar("m0", 0.6, 1, 4)).unwrap();
        let out = apply_missingness(&d, &spec).unwrap();
        let [c0, c1] = missing_by_class(&out, 0);
        assert_eq!(c1.0, 0);
        assert_eq!(c0.0, (0.6 * c0.1 as f64).round() as usize);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let d = data(50, 9);
        assert!(apply_missingness(&d, &MissingnessSpec::mar("m0", 1.5, 0)).is_err());
        assert!(apply_missingness(&d, &MissingnessSpec::mar("nope", 0.5, 0)).is_err());
        let mut bad = MissingnessSpec::mar("m0", 0.5, 0);
        bad.target_class = Some(1);
        assert!(bad.validate().is_err());
        let reg = d.select_tasks(&[2]);
        assert!(apply_missingness(&reg, &MissingnessSpec::mnar("m0", 0.5, 1, 0)).is_err());
    }
}
