//! JSON manifest + CSV ingestion and export.
//!
//! The CSV holds one row per `(sample_id, timestep)`. Column spans in the
//! manifest are absolute, half-open `[start, end)` indices into the header,
//! so columns 0 and 1 (`sample_id`, `timestep`) are never part of a span.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Dataset;
use super::normalize::FeatureRanges;
use super::sample::MultiModSample;
use super::schema::{ModalitySchema, Schema, TaskKind, TaskSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModality {
    pub name: String,
    pub dim: usize,
    pub columns: [usize; 2],
    /// Ingest empty cells as 0 instead of missing (for features whose zeros carry meaning).
    #[serde(default)]
    pub treat_missing_as_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub name: String,
    #[serde(flatten)]
    pub kind: TaskKind,
    pub column: usize,
    #[serde(default)]
    pub per_timestep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modalities: Vec<ManifestModality>,
    pub tasks: Vec<ManifestTask>,
    pub timesteps: usize,
    #[serde(default)]
    pub stratify_task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<FeatureRanges>,
}

impl DatasetManifest {
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

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::format(None, format!("manifest: {msg}"));
        if self.timesteps == 0 {
            return Err(bad("timesteps must be positive".into()));
        }
        let mut spans: Vec<(usize, usize, String)> = Vec::new();
        for m in &self.modalities {
            let [start, end] = m.columns;
            if m.dim == 0 {
                return Err(bad(format!("modality {} has zero dim", m.name)));
            }
            if start < 2 || end <= start || end - start != m.dim {
                return Err(bad(format!(
                    "modality {} span [{start}, {end}) does not hold {} feature columns after sample_id/timestep",
                    m.name, m.dim
                )));
            }
            spans.push((start, end, format!("modality {}", m.name)));
        }
        for t in &self.tasks {
            if t.column < 2 {
                return Err(bad(format!("task {} column {} overlaps the key columns", t.name, t.column)));
            }
            spans.push((t.column, t.column + 1, format!("task {}", t.name)));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(bad(format!("{} overlaps {}", w[0].2, w[1].2)));
            }
        }
        self.schema().validate().map_err(|e| bad(e.to_string()))?;
        if let Some(task) = &self.stratify_task {
            if !self.tasks.iter().any(|t| &t.name == task) {
                return Err(bad(format!("stratify_task {task} is not a declared task")));
            }
        }
        Ok(())
    }

    fn width(&self) -> usize {
        self.modalities
            .iter()
            .map(|m| m.columns[1])
            .chain(self.tasks.iter().map(|t| t.column + 1))
            .max()
            .unwrap_or(2)
    }

    /// Canonical layout for a schema: modalities then tasks, left to right.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        let mut col = 2;
        let modalities = dataset
            .schema
            .modalities
            .iter()
            .map(|m| {
                let start = col;
                col += m.dim;
                ManifestModality {
                    name: m.name.clone(),
                    dim: m.dim,
                    columns: [start, col],
                    treat_missing_as_zero: false,
                }
            })
            .collect();
        let tasks = dataset
            .schema
            .tasks
            .iter()
            .map(|t| {
                col += 1;
                ManifestTask {
                    name: t.name.clone(),
                    kind: t.kind,
                    column: col - 1,
                    per_timestep: t.per_timestep,
                }
            })
            .collect();
        Self {
            modalities,
            tasks,
            timesteps: dataset.timesteps,
            stratify_task: dataset.stratify_task.clone(),
            normalization: None,
        }
    }
}

fn parse_cell(raw: &str) -> std::result::Result<Option<f64>, String> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("cannot parse {s:?} as a number"))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(Some(e.line()), format!("manifest {}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_dataset(manifest_path: &Path, data_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    parse_dataset(&manifest, &bytes, &digest(&bytes))
}

pub fn parse_dataset(manifest: &DatasetManifest, csv_bytes: &[u8], provenance: &str) -> Result<Dataset> {
    manifest.validate()?;
    let schema = manifest.schema();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_bytes);
    let header_len = reader
        .headers()
        .map_err(|e| Error::format(Some(1), e.to_string()))?
        .len();
    if header_len < manifest.width() {
        return Err(Error::format(
            Some(1),
            format!("header has {header_len} columns, manifest references {}", manifest.width()),
        ));
    }

    struct Pending {
        id: String,
        rows: Vec<Option<Vec<Option<Vec<f64>>>>>,
        targets: Vec<Vec<Option<f64>>>,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::format(e.position().map(|p| p.line() as usize), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header_len {
            return Err(Error::format(
                Some(line),
                format!("ragged row: expected {header_len} fields, got {}", record.len()),
            ));
        }
        let id = record[0].trim().to_owned();
        let timestep: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(Some(line), format!("bad timestep {:?}", &record[1])))?;
        if timestep >= manifest.timesteps {
            return Err(Error::format(
                Some(line),
                format!("timestep {timestep} outside declared range 0..{}", manifest.timesteps),
            ));
        }
        let slot = *by_id.entry(id.clone()).or_insert_with(|| {
            order.push(Pending {
                id: id.clone(),
                rows: vec![None; manifest.timesteps],
                targets: manifest
                    .tasks
                    .iter()
                    .map(|t| vec![None; if t.per_timestep { manifest.timesteps } else { 1 }])
                    .collect(),
            });
            order.len() - 1
        });
        let pending = &mut order[slot];
        if pending.rows[timestep].is_some() {
            return Err(Error::format(
                Some(line),
                format!("duplicate row for sample {id} timestep {timestep}"),
            ));
        }
        let cell = |c: usize| parse_cell(&record[c]).map_err(|m| Error::format(Some(line), m));

        let mut step = Vec::with_capacity(manifest.modalities.len());
        for m in &manifest.modalities {
            let mut values = Vec::with_capacity(m.dim);
            for c in m.columns[0]..m.columns[1] {
                let v = cell(c)?;
                values.push(match v {
                    Some(x) => x,
                    None if m.treat_missing_as_zero => 0.0,
                    None => f64::NAN,
                });
            }
            // wholly missing -> absent; partially missing stays NaN-marked
            step.push(if values.iter().all(|x| x.is_nan()) {
                None
            } else {
                Some(values)
            });
        }
        pending.rows[timestep] = Some(step);

        for (k, t) in manifest.tasks.iter().enumerate() {
            let v = cell(t.column)?;
            if let Some(x) = v {
                t.kind.validate_target(x).map_err(|e| {
                    Error::format(Some(line), format!("task {}: {e}", t.name))
                })?;
            }
            if t.per_timestep {
                pending.targets[k][timestep] = v;
            } else if pending.targets[k][0].is_none() {
                pending.targets[k][0] = v;
            }
        }
    }

    let mut samples = Vec::with_capacity(order.len());
    for p in order {
        let mut data = Vec::with_capacity(manifest.timesteps);
        for (t, row) in p.rows.into_iter().enumerate() {
            data.push(row.ok_or_else(|| {
                Error::format(None, format!("sample {} has no row for timestep {t}", p.id))
            })?);
        }
        samples.push(MultiModSample {
            id: p.id,
            data,
            targets: p.targets,
            encoding_sequence: None,
        });
    }
    let dataset = Dataset {
        schema,
        timesteps: manifest.timesteps,
        stratify_task: manifest.stratify_task.clone(),
        samples,
        provenance: provenance.to_owned(),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if !x.is_nan() => format!("{x}"),
        _ => String::new(),
    }
}

/// Renders the dataset as CSV in the layout of [`DatasetManifest::for_dataset`].
pub fn dataset_to_csv(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_owned(), "timestep".to_owned()];
    for m in &dataset.schema.modalities {
        header.extend((0..m.dim).map(|i| format!("{}_{i}", m.name)));
    }
    header.extend(dataset.schema.tasks.iter().map(|t| t.name.clone()));
    let csv_err = |e: csv::Error| Error::format(None, e.to_string());
    writer.write_record(&header).map_err(csv_err)?;
    for s in &dataset.samples {
        for (t, step) in s.data.iter().enumerate() {
            let mut row = vec![s.id.clone(), t.to_string()];
            for (v, m) in step.iter().zip(&dataset.schema.modalities) {
                match v {
                    Some(v) => row.extend(v.iter().map(|&x| fmt_cell(Some(x)))),
                    None => row.extend((0..m.dim).map(|_| String::new())),
                }
            }
            for (k, task) in dataset.schema.tasks.iter().enumerate() {
                let v = if task.per_timestep {
                    s.targets[k][t]
                } else {
                    s.targets[k][0]
                };
                row.push(fmt_cell(v));
            }
            writer.write_record(&row).map_err(csv_err)?;
        }
    }
    writer
        .into_inner()
        .map_err(|e| Error::format(None, e.to_string()))
}

/// Writes `manifest.json` and `data.csv` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest::for_dataset(dataset);
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    let data_path = dir.join("data.csv");
    fs::write(&data_path, dataset_to_csv(dataset)?).map_err(|e| Error::io(&data_path, e))?;
    Ok(())
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}
