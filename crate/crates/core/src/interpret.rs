//! Importance of each modality alone against the prior (IMC), cumulative
//! per-step predictions (CP), and their CSV heatmap export.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MultiModSample};
use crate::error::{Error, Result};
use crate::model::{decode, encode_step, forward_sequence, predict_trajectory, EncodingPlan, MultiModN, StepKind};
use crate::numerics::DropoutPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    MeanSigned,
    MeanAbsolute,
}

/// `scores[m][t]`; a row is `None` when modality `m` is absent in every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub modalities: Vec<String>,
    pub tasks: Vec<String>,
    pub aggregation: Aggregation,
    pub scores: Vec<Option<Vec<f64>>>,
    /// Ids of the samples contributing to each row.
    pub population: Vec<Vec<String>>,
}

/// Per-sample score deltas `decode(encode(s₀, x_m)) − decode(s₀)`, one per task.
pub fn importance_deltas(model: &MultiModN, sample: &MultiModSample, modality: usize, timestep: usize) -> Result<Option<Vec<f64>>> {
    let Some(x) = sample.modality(timestep, modality) else {
        return Ok(None);
    };
    let s0 = &model.initial_state;
    let state = encode_step(&model.encoders[modality], s0, x, &mut DropoutPlan::eval())?;
    model
        .decoders
        .iter()
        .map(|d| Ok(decode(d, &state)?.score() - decode(d, s0)?.score()))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Each encoder deployed alone from the initial state, scored against the
/// prior, at the dataset's last timestep. Eval mode throughout.
pub fn importance_scores(model: &MultiModN, dataset: &Dataset, aggregation: Aggregation) -> Result<ImportanceMatrix> {
    if model.schema() != &dataset.schema {
        return Err(Error::contract("dataset schema differs from the model's"));
    }
    let timestep = dataset.timesteps - 1;
    let tasks: Vec<String> = model.decoders.iter().map(|d| d.task.clone()).collect();
    let mut scores = Vec::with_capacity(model.encoders.len());
    let mut population = Vec::with_capacity(model.encoders.len());
    for m in 0..model.encoders.len() {
        let deltas: Vec<Option<Vec<f64>>> = dataset
            .samples
            .par_iter()
            .map(|s| importance_deltas(model, s, m, timestep))
            .collect::<Result<_>>()?;
        let mut sum = vec![0.0; tasks.len()];
        let mut ids = Vec::new();
        for (s, d) in dataset.samples.iter().zip(&deltas) {
            let Some(d) = d else { continue };
            ids.push(s.id.clone());
            for (acc, v) in sum.iter_mut().zip(d) {
                *acc += match aggregation {
                    Aggregation::MeanSigned => *v,
                    Aggregation::MeanAbsolute => v.abs(),
                };
            }
        }
        scores.push((!ids.is_empty()).then(|| sum.iter().map(|v| v / ids.len() as f64).collect()));
        population.push(ids);
    }
    Ok(ImportanceMatrix {
        modalities: model.encoders.iter().map(|e| e.modality.clone()).collect(),
        tasks,
        aggregation,
        scores,
        population,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRow {
    /// `"prior"` or the modality just encoded (suffixed `@t` for time series).
    pub label: String,
    pub timestep: usize,
    /// Score per task, in model order.
    pub scores: Vec<f64>,
}

/// Predictions after each encoded, non-skipped modality; row 0 is the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeGrid {
    pub sample_id: String,
    pub tasks: Vec<String>,
    pub rows: Vec<CumulativeRow>,
}

pub fn cumulative_predictions(model: &MultiModN, sample: &MultiModSample) -> Result<CumulativeGrid> {
    let traj = forward_sequence(model, sample, &EncodingPlan::full(model), &mut DropoutPlan::eval())?;
    let grid = predict_trajectory(model, &traj)?;
    let series = sample.timesteps() > 1;
    let rows = grid
        .rows
        .into_iter()
        .map(|r| {
            let label = match r.kind {
                StepKind::Initial => "prior".to_owned(),
                StepKind::Encoded { encoder } if series => {
                    format!("{}@{}", model.encoders[encoder].modality, r.timestep)
                }
                StepKind::Encoded { encoder } => model.encoders[encoder].modality.clone(),
            };
            CumulativeRow {
                label,
                timestep: r.timestep,
                scores: r.predictions.iter().map(|p| p.score()).collect(),
            }
        })
        .collect();
    Ok(CumulativeGrid {
        sample_id: sample.id.clone(),
        tasks: grid.tasks,
        rows,
    })
}

/// A labelled grid that can be written as a heatmap table.
pub trait Heatmap {
    /// Header of the row-label column.
    fn row_axis(&self) -> &str;
    fn row_labels(&self) -> Vec<String>;
    fn column_labels(&self) -> &[String];
    /// `None` rows are written as empty cells.
    fn cells(&self) -> Vec<Option<Vec<f64>>>;
}

impl Heatmap for ImportanceMatrix {
    fn row_axis(&self) -> &str {
        "modality"
    }

    fn row_labels(&self) -> Vec<String> {
        self.modalities.clone()
    }

    fn column_labels(&self) -> &[String] {
        &self.tasks
    }

    fn cells(&self) -> Vec<Option<Vec<f64>>> {
        self.scores.clone()
    }
}

impl Heatmap for CumulativeGrid {
    fn row_axis(&self) -> &str {
        "step"
    }

    fn row_labels(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect()
    }

    fn column_labels(&self) -> &[String] {
        &self.tasks
    }

    fn cells(&self) -> Vec<Option<Vec<f64>>> {
        self.rows.iter().map(|r| Some(r.scores.clone())).collect()
    }
}

pub fn heatmap_csv<H: Heatmap + ?Sized>(map: &H) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(None, e.to_string());
    let mut header = vec![map.row_axis().to_owned()];
    header.extend(map.column_labels().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let width = map.column_labels().len();
    for (label, row) in map.row_labels().into_iter().zip(map.cells()) {
        let mut record = vec![label];
        match row {
            Some(values) => record.extend(values.iter().map(f64::to_string)),
            None => record.extend(std::iter::repeat_n(String::new(), width)),
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(None, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_heatmap<H: Heatmap + ?Sized>(map: &H, destination: &Path) -> Result<()> {
    std::fs::write(destination, heatmap_csv(map)?).map_err(|e| Error::io(destination, e))
}

/// A heatmap read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTable {
    pub row_axis: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Option<Vec<f64>>)>,
}

pub fn parse_heatmap(text: &str) -> Result<HeatmapTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::format(Some(1), "empty heatmap"))?
        .map_err(|e| Error::format(Some(1), e.to_string()))?;
    let row_axis = header.get(0).unwrap_or_default().to_owned();
    let columns: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::format(Some(line), e.to_string()))?;
        let label = rec.get(0).unwrap_or_default().to_owned();
        let cells: Vec<&str> = rec.iter().skip(1).collect();
        let values = if cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            Some(
                cells
                    .iter()
                    .map(|c| {
                        c.parse::<f64>()
                            .map_err(|e| Error::format(Some(line), format!("cell {c:?}: {e}")))
                    })
                    .collect::<Result<_>>()?,
            )
        };
        rows.push((label, values));
    }
    Ok(HeatmapTable { row_axis, columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::model::{init_model, predict_at, Architecture};

    fn setup(n: usize) -> (MultiModN, Dataset) {
        let spec = SynthSpec {
            n_samples: n,
            ..SynthSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let model = init_model(&Architecture::new(data.schema.clone(), 6, 8), 3).unwrap();
        (model, data)
    }

    #[test]
    fn degenerate_network_has_zero_importance() {
        let (model, data) = setup(20);
        let zero = MultiModN::zeroed(&model.arch).unwrap();
        let imc = importance_scores(&zero, &data, Aggregation::MeanSigned).unwrap();
        assert_eq!(imc.scores.len(), 2);
        for row in imc.scores.iter().flatten() {
            assert_eq!(row.len(), 3);
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn absent_modality_row_is_none() {
        let (model, mut data) = setup(10);
        for s in &mut data.samples {
            s.erase_modality(1);
        }
        data.samples[3].erase_modality(0);
        let imc = importance_scores(&model, &data, Aggregation::MeanAbsolute).unwrap();
        assert!(imc.scores[1].is_none());
        assert_eq!(imc.population[0].len(), 9);
        assert!(!imc.population[0].contains(&data.samples[3].id));
    }

    #[test]
    fn excluding_a_sample_from_one_row_leaves_others() {
        let (model, data) = setup(30);
        let base = importance_scores(&model, &data, Aggregation::MeanSigned).unwrap();
        let mut edited = data.clone();
        edited.samples[0].erase_modality(0);
        let after = importance_scores(&model, &edited, Aggregation::MeanSigned).unwrap();
        assert_eq!(base.scores[1], after.scores[1]);
        assert_ne!(base.scores[0], after.scores[0]);
    }

    #[test]
    fn cumulative_grid_shape_and_consistency() {
        let (model, data) = setup(5);
        let a = cumulative_predictions(&model, &data.samples[0]).unwrap();
        let b = cumulative_predictions(&model, &data.samples[1]).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.rows[0].label, "prior");
        assert_eq!(a.rows[0].scores, b.rows[0].scores);
        let fin: Vec<f64> = predict_at(&model, &data.samples[0], 0)
            .unwrap()
            .iter()
            .map(|p| p.score())
            .collect();
        assert_eq!(a.rows.last().unwrap().scores, fin);
        assert!(a.rows.iter().all(|r| (0.0..1.0).contains(&r.scores[0]) && r.scores[0] > 0.0));
    }

    #[test]
    fn all_missing_gives_prior_only() {
        let (model, data) = setup(2);
        let mut s = data.samples[0].clone();
        s.erase_modality(0);
        s.erase_modality(1);
        let grid = cumulative_predictions(&model, &s).unwrap();
        assert_eq!(grid.rows.len(), 1);
    }

    #[test]
    fn heatmap_round_trip_is_exact() {
        let (model, data) = setup(40);
        let mut edited = data.clone();
        for s in &mut edited.samples {
            s.erase_modality(1);
        }
        let imc = importance_scores(&model, &edited, Aggregation::MeanSigned).unwrap();
        let table = parse_heatmap(&heatmap_csv(&imc).unwrap()).unwrap();
        assert_eq!(table.row_axis, "modality");
        assert_eq!(table.columns, vec!["y0", "y1", "r0"]);
        assert_eq!(table.rows[0].1, imc.scores[0]);
        assert_eq!(table.rows[1].1, None);

        let cp = cumulative_predictions(&model, &data.samples[2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.csv");
        export_heatmap(&cp, &path).unwrap();
        let table = parse_heatmap(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(table.rows.len(), cp.rows.len());
        for (row, (label, values)) in cp.rows.iter().zip(&table.rows) {
            assert_eq!(&row.label, label);
            assert_eq!(Some(&row.scores), values.as_ref());
        }
    }
}
