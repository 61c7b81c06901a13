//! Linear-Gaussian multimodal generator.
//!
//! Each sample draws a latent `z ~ N(0, I_k)`; modality `m` observes
//! `A_m·z + noise` and tasks are thresholds or projections of `z`. With more
//! than one timestep the latent follows an AR(1) walk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Dataset;
use super::sample::MultiModSample;
use super::schema::{ModalitySchema, Schema, TaskKind, TaskSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub name: String,
    pub dim: usize,
    /// Overrides the spec-wide noise scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Unit-variance noise, independent of the latent and every target.
    #[serde(default)]
    pub null: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub name: String,
    #[serde(flatten)]
    pub kind: TaskKind,
    #[serde(default)]
    pub per_timestep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub latent_dim: usize,
    pub modalities: Vec<SynthModality>,
    pub noise: f64,
    pub tasks: Vec<SynthTask>,
    #[serde(default = "one")]
    pub timesteps: usize,
    #[serde(default = "default_autocorrelation")]
    pub autocorrelation: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_autocorrelation() -> f64 {
    0.9
}

impl Default for SynthSpec {
    /// 2000 samples, 8 latent dims, two 16-dim modalities at noise 0.5, two
    /// binary tasks and one regression task.
    fn default() -> Self {
        Self {
            n_samples: 2000,
            latent_dim: 8,
            modalities: vec![
                SynthModality {
                    name: "m0".into(),
                    dim: 16,
                    noise: None,
                    null: false,
                },
                SynthModality {
                    name: "m1".into(),
                    dim: 16,
                    noise: None,
                    null: false,
                },
            ],
            noise: 0.5,
            tasks: vec![
                SynthTask {
                    name: "y0".into(),
                    kind: TaskKind::Binary,
                    per_timestep: false,
                },
                SynthTask {
                    name: "y1".into(),
                    kind: TaskKind::Binary,
                    per_timestep: false,
                },
                SynthTask {
                    name: "r0".into(),
                    kind: TaskKind::Regression,
                    per_timestep: false,
                },
            ],
            timesteps: 1,
            autocorrelation: 0.9,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::contract(format!("synth spec field {field}: {msg}")));
        if self.n_samples == 0 {
            return bad("n_samples", "must be positive");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be at least 1");
        }
        if self.modalities.is_empty() {
            return bad("modalities", "at least one modality required");
        }
        if let Some(m) = self.modalities.iter().find(|m| m.dim == 0) {
            return bad("modalities", &format!("{} has zero dim", m.name));
        }
        if self.tasks.is_empty() {
            return bad("tasks", "at least one task required");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", "must be a finite non-negative scale");
        }
        if self
            .modalities
            .iter()
            .any(|m| m.noise.is_some_and(|n| !(n >= 0.0 && n.is_finite())))
        {
            return bad("modalities.noise", "must be a finite non-negative scale");
        }
        if self.timesteps == 0 {
            return bad("timesteps", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.autocorrelation) {
            return bad("autocorrelation", "must lie in [0, 1]");
        }
        self.schema().validate()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            modalities: self
                .modalities
                .iter()
                .map(|m| ModalitySchema {
                    name: m.name.clone(),
                    dim: m.dim,
                })
                .collect(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskSchema {
                    name: t.name.clone(),
                    kind: t.kind,
                    per_timestep: t.per_timestep,
                })
                .collect(),
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))[..16].to_owned()
    }
}

/// Generator internals, exposed for identifiability checks.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// `latents[sample][timestep]`.
    pub latents: Vec<Vec<Vec<f64>>>,
    /// `mixing[modality]` is `dim × latent_dim`, row-major rows.
    pub mixing: Vec<Vec<Vec<f64>>>,
    /// One unit direction per task (several for multiclass).
    pub task_directions: Vec<Vec<Vec<f64>>>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    generate_synthetic_with_truth(spec).map(|(d, _)| d)
}

pub fn generate_synthetic_with_truth(spec: &SynthSpec) -> Result<(Dataset, SynthTruth)> {
    spec.validate()?;
    let k = spec.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let task_directions: Vec<Vec<Vec<f64>>> = spec
        .tasks
        .iter()
        .map(|t| {
            let count = match t.kind {
                TaskKind::Multiclass { classes } => classes,
                _ => 1,
            };
            (0..count).map(|_| unit(normal_vec(&mut rng, k))).collect()
        })
        .collect();

    // each informative A_m must see every task direction
    let scale = 1.0 / (k as f64).sqrt();
    let mut mixing = Vec::with_capacity(spec.modalities.len());
    for (mi, m) in spec.modalities.iter().enumerate() {
        let mut mrng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(mi as u64 + 1)));
        loop {
            let a: Vec<Vec<f64>> = (0..m.dim)
                .map(|_| normal_vec(&mut mrng, k).into_iter().map(|x| x * scale).collect())
                .collect();
            let sees_all = m.null
                || task_directions.iter().flatten().all(|w| {
                    a.iter().map(|row| dot(row, w).powi(2)).sum::<f64>() > 1e-12
                });
            if sees_all {
                mixing.push(a);
                break;
            }
        }
    }

    let rho = spec.autocorrelation;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut latents = Vec::with_capacity(spec.n_samples);
    let mut features = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let mut z = normal_vec(&mut rng, k);
        let mut zs = Vec::with_capacity(spec.timesteps);
        let mut steps = Vec::with_capacity(spec.timesteps);
        for t in 0..spec.timesteps {
            if t > 0 {
                let eps = normal_vec(&mut rng, k);
                for (zi, e) in z.iter_mut().zip(eps) {
                    *zi = rho * *zi + innovation * e;
                }
            }
            let step: Vec<Option<Vec<f64>>> = spec
                .modalities
                .iter()
                .zip(&mixing)
                .map(|(m, a)| {
                    let sigma = m.noise.unwrap_or(spec.noise);
                    let x = a
                        .iter()
                        .map(|row| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            if m.null {
                                e
                            } else {
                                dot(row, &z) + sigma * e
                            }
                        })
                        .collect();
                    Some(x)
                })
                .collect();
            zs.push(z.clone());
            steps.push(step);
        }
        latents.push(zs);
        features.push(steps);
    }

    // raw targets; regression gets min-max rescaled below
    let last = spec.timesteps - 1;
    let mut targets: Vec<Vec<Vec<Option<f64>>>> = latents
        .iter()
        .map(|zs| {
            spec.tasks
                .iter()
                .zip(&task_directions)
                .map(|(t, dirs)| {
                    let at = |z: &[f64]| match t.kind {
                        TaskKind::Binary => (dot(&dirs[0], z) > 0.0) as u8 as f64,
                        TaskKind::Regression => dot(&dirs[0], z),
                        TaskKind::Multiclass { .. } => dirs
                            .iter()
                            .enumerate()
                            .map(|(c, w)| (c, dot(w, z)))
                            .fold((0, f64::NEG_INFINITY), |best, cur| {
                                if cur.1 > best.1 { cur } else { best }
                            })
                            .0 as f64,
                    };
                    if t.per_timestep {
                        zs.iter().map(|z| Some(at(z))).collect()
                    } else {
                        vec![Some(at(&zs[last]))]
                    }
                })
                .collect()
        })
        .collect();
    for (ti, t) in spec.tasks.iter().enumerate() {
        if t.kind != TaskKind::Regression {
            continue;
        }
        let (lo, hi) = targets
            .iter()
            .flat_map(|s| s[ti].iter().flatten())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        for s in &mut targets {
            for v in s[ti].iter_mut().flatten() {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }

    let samples = features
        .into_iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (data, targets))| MultiModSample {
            id: format!("s{i:05}"),
            data,
            targets,
            encoding_sequence: None,
        })
        .collect();

    let stratify_task = spec
        .tasks
        .iter()
        .find(|t| t.kind.is_classification())
        .map(|t| t.name.clone());
    let dataset = Dataset {
        schema: spec.schema(),
        timesteps: spec.timesteps,
        stratify_task,
        samples,
        provenance: format!("synthetic:{}", spec.hash()),
    };
    dataset.validate()?;
    Ok((
        dataset,
        SynthTruth {
            latents,
            mixing,
            task_directions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthSpec {
        SynthSpec {
            n_samples: n,
            ..SynthSpec::default()
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_spec_same_dataset() {
        let a = generate_synthetic(&small(50)).unwrap();
        let b = generate_synthetic(&small(50)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 8, ..small(50) }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn shape_matches_schema() {
        let spec = SynthSpec {
            timesteps: 3,
            ..small(20)
        };
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d.schema, spec.schema());
        assert_eq!(d.stratify_task.as_deref(), Some("y0"));
        for s in &d.samples {
            assert_eq!(s.timesteps(), 3);
            assert_eq!(s.missing_count(), 0);
            assert!(s.data.iter().flatten().flatten().all(|x| x.len() == 16));
            let r = s.target(2, 0).unwrap();
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn binary_targets_are_roughly_balanced() {
        let d = generate_synthetic(&small(2000)).unwrap();
        let positives = d.samples.iter().filter(|s| s.target(0, 0) == Some(1.0)).count();
        // hyperplane through the latent mean; 5 standard errors
        assert!((positives as f64 - 1000.0).abs() < 5.0 * 22.4, "{positives}");
    }

    #[test]
    fn null_modality_ignores_targets() {
        let mut spec = small(3000);
        spec.modalities.push(SynthModality {
            name: "null".into(),
            dim: 4,
            noise: None,
            null: true,
        });
        let (d, truth) = generate_synthetic_with_truth(&spec).unwrap();
        let y: Vec<f64> = d.samples.iter().map(|s| s.target(0, 0).unwrap()).collect();
        for j in 0..4 {
            let x: Vec<f64> = d.samples.iter().map(|s| s.modality(0, 2).unwrap()[j]).collect();
            // |r| under independence is ~ 1/sqrt(n) = 0.018
            assert!(correlation(&x, &y).abs() < 0.08);
        }
        let informative: Vec<f64> = d.samples.iter().map(|s| s.modality(0, 0).unwrap()[0]).collect();
        let latent: Vec<f64> = truth.latents.iter().map(|z| dot(&truth.mixing[0][0], &z[0])).collect();
        assert!(correlation(&informative, &latent) > 0.5);
    }

    #[test]
    fn zero_noise_features_are_the_mixed_latent() {
        let spec = SynthSpec { noise: 0.0, ..small(5) };
        let (d, truth) = generate_synthetic_with_truth(&spec).unwrap();
        for (s, z) in d.samples.iter().zip(&truth.latents) {
            let x = s.modality(0, 1).unwrap();
            for (xi, row) in x.iter().zip(&truth.mixing[1]) {
                assert_eq!(*xi, dot(row, &z[0]));
            }
        }
    }

    #[test]
    fn validation_names_the_field() {
        let cases: Vec<(SynthSpec, &str)> = vec![
            (small(0), "n_samples"),
            (SynthSpec { latent_dim: 0, ..small(5) }, "latent_dim"),
            (SynthSpec { noise: -1.0, ..small(5) }, "noise"),
            (SynthSpec { timesteps: 0, ..small(5) }, "timesteps"),
            (SynthSpec { autocorrelation: 1.5, ..small(5) }, "autocorrelation"),
            (SynthSpec { tasks: vec![], ..small(5) }, "tasks"),
        ];
        for (spec, field) in cases {
            let err = generate_synthetic(&spec).unwrap_err().to_string();
            assert!(err.contains(field), "{err}");
        }
    }
}
