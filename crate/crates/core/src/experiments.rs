//! Experiment drivers: the MNAR grid, single- and multi-task parity, and
//! inference under modality subsets.
//!
//! Every driver is deterministic given its config. Grid cells run in
//! parallel; per-cell randomness is derived from the config seed and the
//! cell's coordinates, never from scheduling order.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{init_pfusion, PFusionArchitecture};
use crate::data::{generate_synthetic, load_dataset, minmax_normalize, stratified_kfold, Dataset, Fold, SynthSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::missingness::{apply_missingness, flip_spec, MissingnessMode, MissingnessSpec};
use crate::model::{init_model, Architecture, MultiModN};
use crate::training::{evaluate, fit, Learner, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic { spec: SynthSpec },
    Files { manifest: PathBuf, data: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { spec } => generate_synthetic(spec),
            DataSource::Files { manifest, data } => load_dataset(manifest, data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestCondition {
    /// No injected missingness.
    Clean,
    /// The training pattern, freshly drawn.
    Same,
    /// The training pattern aimed at the other class.
    Flipped,
}

impl TestCondition {
    pub fn label(self) -> &'static str {
        match self {
            TestCondition::Clean => "clean",
            TestCondition::Same => "same",
            TestCondition::Flipped => "flipped",
        }
    }
}

fn default_modes() -> Vec<MissingnessMode> {
    vec![MissingnessMode::Mnar]
}

fn default_rates() -> Vec<f64> {
    vec![0.0, 0.1, 0.5, 0.8]
}

fn default_conditions() -> Vec<TestCondition> {
    vec![TestCondition::Clean, TestCondition::Same, TestCondition::Flipped]
}

fn default_target_class() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessGrid {
    pub modality: String,
    #[serde(default = "default_modes")]
    pub modes: Vec<MissingnessMode>,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    /// Class losing the modality in training (mnar only).
    #[serde(default = "default_target_class")]
    pub target_class: usize,
    #[serde(default = "default_conditions")]
    pub test_conditions: Vec<TestCondition>,
}

fn default_folds() -> usize {
    5
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Shared by both arms.
    #[serde(default)]
    pub training: TrainingConfig,
    /// Min-max scale features using the training split's ranges.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Parity repetitions.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missingness: Option<MissingnessGrid>,
}

impl ExperimentConfig {
    pub fn synthetic(spec: SynthSpec) -> Self {
        Self {
            data: DataSource::Synthetic { spec },
            training: TrainingConfig::default(),
            normalize: true,
            folds: default_folds(),
            seeds: default_seeds(),
            seed: 0,
            missingness: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.folds < 2 {
            return Err(Error::contract("folds must be at least 2"));
        }
        if let Some(grid) = &self.missingness {
            if let Some(r) = grid.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(Error::contract(format!("grid rate {r} outside [0, 1]")));
            }
            if grid.target_class > 1 {
                return Err(Error::contract("grid target_class must be 0 or 1"));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_owned()
    }
}

/// The committed MNAR reference: default synthetic geometry at feature noise
/// 0.3, the first binary task only, MNAR on the last modality of class 1.
///
/// The erased modality must be the last one encoded. Erasing the first would
/// leave the second encoder reading the untouched initial state, which makes
/// the skip itself a class signal.
pub fn mnar_reference_config() -> ExperimentConfig {
    let mut spec = SynthSpec {
        noise: 0.3,
        ..SynthSpec::default()
    };
    spec.tasks.truncate(1);
    let mut config = ExperimentConfig::synthetic(spec);
    config.missingness = Some(MissingnessGrid {
        modality: "m1".to_owned(),
        modes: default_modes(),
        rates: default_rates(),
        target_class: 1,
        test_conditions: default_conditions(),
    });
    config
}

/// One grid cell: an arm under a training condition and a test condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub arm: String,
    pub mode: MissingnessMode,
    pub rate: f64,
    pub test_condition: String,
    /// Pooled over folds or seeds; per-fold values sit in each metric.
    pub report: Option<MetricsReport>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub config_hash: String,
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn cell(&self, arm: &str, mode: MissingnessMode, rate: f64, condition: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.arm == arm && c.mode == mode && c.rate == rate && c.test_condition == condition)
    }

    pub fn estimate(&self, arm: &str, mode: MissingnessMode, rate: f64, condition: &str, task: &str, metric: &str) -> Option<f64> {
        self.cell(arm, mode, rate, condition)?
            .report
            .as_ref()?
            .estimate(task, metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long format: arm, mode, rate, test_condition, task, metric, value,
    /// ci_low, ci_high. Failed cells get one row with empty metric cells.
    pub fn to_long_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::format(None, e.to_string());
        w.write_record([
            "arm",
            "mode",
            "rate",
            "test_condition",
            "task",
            "metric",
            "value",
            "ci_low",
            "ci_high",
        ])
        .map_err(err)?;
        for c in &self.cells {
            let mode = serde_json::to_value(c.mode)?.as_str().unwrap_or_default().to_owned();
            let head = [c.arm.clone(), mode, c.rate.to_string(), c.test_condition.clone()];
            let Some(report) = &c.report else {
                let mut row = head.to_vec();
                row.extend(std::iter::repeat_n(String::new(), 5));
                w.write_record(&row).map_err(err)?;
                continue;
            };
            for t in &report.tasks {
                for (name, v) in &t.metrics {
                    let mut row = head.to_vec();
                    let [lo, hi] = v.ci.map(|[a, b]| [a.to_string(), b.to_string()]).unwrap_or_default();
                    row.extend([t.task.clone(), name.clone(), v.estimate.to_string(), lo, hi]);
                    w.write_record(&row).map_err(err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::format(None, e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Train, validation and test sets of one fold; features scaled by the
/// training split's ranges when requested.
pub fn prepare_fold(data: &Dataset, fold: &Fold, normalize: bool) -> Result<(Dataset, Dataset, Dataset)> {
    let train = data.subset(&fold.train);
    let val = data.subset(&fold.val);
    let test = data.subset(&fold.test);
    if !normalize {
        return Ok((train, val, test));
    }
    let (train, ranges, _) = minmax_normalize(&train)?;
    Ok((train, ranges.apply(&val)?, ranges.apply(&test)?))
}

fn multimodn_for(data: &Dataset, training: &TrainingConfig, seed: u64) -> Result<MultiModN> {
    let arch = Architecture::new(data.schema.clone(), training.state_size, training.hidden_size);
    init_model(&arch, seed)
}

fn pfusion_for(data: &Dataset, training: &TrainingConfig, seed: u64) -> Result<crate::baseline::PFusion> {
    if data.schema.tasks.len() != 1 {
        return Err(Error::contract("P-Fusion takes exactly one task"));
    }
    init_pfusion(
        &PFusionArchitecture {
            modalities: data.schema.modalities.clone(),
            task: data.schema.tasks[0].clone(),
            hidden_size: training.hidden_size,
        },
        seed,
    )
}

fn train_and_test<L: Learner>(
    model: L,
    train: &Dataset,
    val: &Dataset,
    tests: &[Option<Dataset>],
    training: &TrainingConfig,
) -> Result<Vec<Option<MetricsReport>>> {
    let (best, _) = fit(&model, train, val, training)?;
    tests
        .iter()
        .map(|t| t.as_ref().map(|d| best.evaluate(d, &training.eval)).transpose())
        .collect()
}

pub const MULTIMODN_ARM: &str = "multimodn";
pub const PFUSION_ARM: &str = "pfusion";

type FoldOutcome = Result<Vec<Option<MetricsReport>>>;

fn pool_cells(
    arm: &str,
    mode: MissingnessMode,
    rate: f64,
    conditions: &[TestCondition],
    per_fold: &[FoldOutcome],
    unavailable: &[Option<String>],
) -> Vec<CellResult> {
    conditions
        .iter()
        .enumerate()
        .map(|(k, cond)| {
            let failed = |reason: String| CellResult {
                arm: arm.to_owned(),
                mode,
                rate,
                test_condition: cond.label().to_owned(),
                report: None,
                failure: Some(reason),
            };
            if let Some(reason) = &unavailable[k] {
                return failed(reason.clone());
            }
            let mut reports = Vec::with_capacity(per_fold.len());
            for (f, outcome) in per_fold.iter().enumerate() {
                match outcome {
                    Err(e) => return failed(format!("fold {f}: {e}")),
                    Ok(r) => reports.push(r[k].clone().expect("condition available")),
                }
            }
            let labels = (0..reports.len()).map(|f| format!("fold{f}")).collect();
            match MetricsReport::pool(&reports, labels) {
                Ok(report) => CellResult {
                    arm: arm.to_owned(),
                    mode,
                    rate,
                    test_condition: cond.label().to_owned(),
                    report: Some(report),
                    failure: None,
                },
                Err(e) => failed(e.to_string()),
            }
        })
        .collect()
}

/// Trains both arms on every (mode, rate) condition of every fold and scores
/// each on the configured test conditions. Both arms see the same splits and
/// the same injected datasets; only the stratification task is modelled.
pub fn run_mnar_grid(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let grid = config
        .missingness
        .as_ref()
        .ok_or_else(|| Error::contract("experiment config has no missingness grid"))?;
    let full = config.data.load()?;
    let task = full.stratify_index()?;
    if !full.is_binary(task) {
        return Err(Error::contract("the missingness grid needs a binary stratification task"));
    }
    let data = full.select_tasks(&[task]);
    data.schema.modality_index(&grid.modality)?;
    let folds = stratified_kfold(&data, config.folds, config.seed)?;
    let prepared: Vec<(Dataset, Dataset, Dataset)> = folds
        .iter()
        .map(|f| prepare_fold(&data, f, config.normalize))
        .collect::<Result<_>>()?;

    let conditions: Vec<(MissingnessMode, f64)> = grid
        .modes
        .iter()
        .flat_map(|&m| grid.rates.iter().map(move |&r| (m, r)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();

    // [job] -> (multimodn outcome, pfusion outcome, unavailable reasons)
    let outcomes: Vec<(FoldOutcome, FoldOutcome, Vec<Option<String>>)> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (mode, rate) = conditions[c];
            let (train, val, test) = &prepared[f];
            let train_seed = mix(config.seed, f as u64, 0);
            let spec = MissingnessSpec {
                mode,
                modality: grid.modality.clone(),
                rate,
                target_class: (mode == MissingnessMode::Mnar).then_some(grid.target_class),
                seed: mix(config.seed, c as u64, f as u64 + 1),
            };
            let test_spec = spec.with_seed(mix(config.seed ^ 0x7e57, c as u64, f as u64 + 1));
            let injected = (|| -> Result<(Dataset, Dataset)> {
                // train and validation share one draw
                let pool = Dataset {
                    samples: train.samples.iter().chain(&val.samples).cloned().collect(),
                    ..train.clone()
                };
                let pool = apply_missingness(&pool, &spec)?;
                let n = train.len();
                Ok((pool.subset(&(0..n).collect::<Vec<_>>()), pool.subset(&(n..pool.len()).collect::<Vec<_>>())))
            })();
            let mut unavailable = Vec::new();
            let tests: Vec<Option<Dataset>> = grid
                .test_conditions
                .iter()
                .map(|cond| {
                    let d = match cond {
                        TestCondition::Clean => Ok(test.clone()),
                        TestCondition::Same => apply_missingness(test, &test_spec),
                        TestCondition::Flipped if mode == MissingnessMode::None => Ok(test.clone()),
                        TestCondition::Flipped => {
                            flip_spec(&test_spec).and_then(|s| apply_missingness(test, &s))
                        }
                    };
                    match d {
                        Ok(d) => {
                            unavailable.push(None);
                            Some(d)
                        }
                        Err(e) => {
                            unavailable.push(Some(e.to_string()));
                            None
                        }
                    }
                })
                .collect();
            let (tr, va) = match injected {
                Ok(x) => x,
                Err(e) => {
                    let msg = e.to_string();
                    return (Err(Error::Contract(msg.clone())), Err(Error::Contract(msg)), unavailable);
                }
            };
            let mmn = multimodn_for(&tr, &config.training, train_seed)
                .and_then(|m| train_and_test(m, &tr, &va, &tests, &config.training));
            let pf = pfusion_for(&tr, &config.training, train_seed)
                .and_then(|m| train_and_test(m, &tr, &va, &tests, &config.training));
            log::info!("mnar cell {mode:?} rate {rate} fold {f} done");
            (mmn, pf, unavailable)
        })
        .collect();

    let mut cells = Vec::new();
    for (c, &(mode, rate)) in conditions.iter().enumerate() {
        let slice = &outcomes[c * folds.len()..(c + 1) * folds.len()];
        let unavailable = merge_unavailable(slice.iter().map(|o| &o.2));
        let mmn: Vec<FoldOutcome> = slice.iter().map(|o| clone_outcome(&o.0)).collect();
        let pf: Vec<FoldOutcome> = slice.iter().map(|o| clone_outcome(&o.1)).collect();
        cells.extend(pool_cells(MULTIMODN_ARM, mode, rate, &grid.test_conditions, &mmn, &unavailable));
        cells.extend(pool_cells(PFUSION_ARM, mode, rate, &grid.test_conditions, &pf, &unavailable));
    }
    Ok(ExperimentResult {
        experiment: "mnar-grid".to_owned(),
        config_hash: config.hash(),
        cells,
    })
}

fn merge_unavailable<'a>(per_fold: impl Iterator<Item = &'a Vec<Option<String>>>) -> Vec<Option<String>> {
    let mut merged: Vec<Option<String>> = Vec::new();
    for reasons in per_fold {
        if merged.is_empty() {
            merged = reasons.clone();
            continue;
        }
        for (m, r) in merged.iter_mut().zip(reasons) {
            if m.is_none() {
                *m = r.clone();
            }
        }
    }
    merged
}

fn clone_outcome(o: &FoldOutcome) -> FoldOutcome {
    match o {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Contract(e.to_string())),
    }
}

pub const MULTITASK_ARM: &str = "multimodn-multitask";
pub const SINGLE_TASK_ARM: &str = "multimodn-single";

/// Per-task test metrics of a multi-task MultiModN, single-task MultiModN
/// models and single-task P-Fusion models, repeated over `config.seeds`.
/// Each seed draws its own stratified split (fold 0).
pub fn run_parity(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    if config.seeds.len() < 2 {
        return Err(Error::contract("parity needs at least two seeds for intervals"));
    }
    let data = config.data.load()?;
    let n_tasks = data.schema.tasks.len();
    if n_tasks < 2 {
        return Err(Error::contract("parity needs at least two tasks"));
    }
    let splits: Vec<(Dataset, Dataset, Dataset)> = config
        .seeds
        .iter()
        .map(|&s| {
            let folds = stratified_kfold(&data, config.folds, s)?;
            prepare_fold(&data, &folds[0], config.normalize)
        })
        .collect::<Result<_>>()?;

    // job 0: multi-task; jobs 1..=T single-task MultiModN; then P-Fusion
    let arms = 1 + 2 * n_tasks;
    let jobs: Vec<(usize, usize)> = (0..config.seeds.len())
        .flat_map(|s| (0..arms).map(move |a| (s, a)))
        .collect();
    let outcomes: Vec<Result<MetricsReport>> = jobs
        .par_iter()
        .map(|&(s, a)| {
            let (train, val, test) = &splits[s];
            let seed = config.seeds[s];
            let mut training = config.training.clone();
            training.seed = seed;
            let tests = [Some(test.clone())];
            let reports = if a == 0 {
                let m = multimodn_for(train, &training, seed)?;
                train_and_test(m, train, val, &tests, &training)?
            } else {
                let task = (a - 1) % n_tasks;
                let (tr, va, te) = (train.select_tasks(&[task]), val.select_tasks(&[task]), test.select_tasks(&[task]));
                training.best_model_metric = None;
                training.task_weights = None;
                let tests = [Some(te)];
                if a <= n_tasks {
                    let m = multimodn_for(&tr, &training, seed)?;
                    train_and_test(m, &tr, &va, &tests, &training)?
                } else {
                    let m = pfusion_for(&tr, &training, seed)?;
                    train_and_test(m, &tr, &va, &tests, &training)?
                }
            };
            log::info!("parity seed {seed} job {a} done");
            Ok(reports.into_iter().next().flatten().expect("one test set"))
        })
        .collect();

    let labels: Vec<String> = config.seeds.iter().map(|s| format!("seed{s}")).collect();
    let mut cells = Vec::new();
    let arm_names = [MULTITASK_ARM, SINGLE_TASK_ARM, PFUSION_ARM];
    for (k, arm) in arm_names.iter().enumerate() {
        let result = (|| -> Result<MetricsReport> {
            let mut per_seed = Vec::with_capacity(config.seeds.len());
            for s in 0..config.seeds.len() {
                let row = &outcomes[s * arms..(s + 1) * arms];
                let report = if k == 0 {
                    clone_result(&row[0])?
                } else {
                    let offset = 1 + (k - 1) * n_tasks;
                    let mut merged = MetricsReport::default();
                    for r in &row[offset..offset + n_tasks] {
                        merged.tasks.extend(clone_result(r)?.tasks);
                    }
                    merged
                };
                per_seed.push(report);
            }
            MetricsReport::pool(&per_seed, labels.clone())
        })();
        cells.push(CellResult {
            arm: (*arm).to_owned(),
            mode: MissingnessMode::None,
            rate: 0.0,
            test_condition: TestCondition::Clean.label().to_owned(),
            failure: result.as_ref().err().map(ToString::to_string),
            report: result.ok(),
        });
    }
    Ok(ExperimentResult {
        experiment: "parity".to_owned(),
        config_hash: config.hash(),
        cells,
    })
}

fn clone_result(r: &Result<MetricsReport>) -> Result<MetricsReport> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Contract(e.to_string())),
    }
}

/// `"m0+m1"`, or `"none"` for the empty subset.
pub fn subset_label(subset: &[String]) -> String {
    if subset.is_empty() {
        "none".to_owned()
    } else {
        subset.join("+")
    }
}

/// Evaluates one trained model with every modality outside each subset
/// marked missing. No retraining.
pub fn run_inference_combinations(
    model: &MultiModN,
    dataset: &Dataset,
    subsets: &[Vec<String>],
    options: &crate::training::EvalOptions,
) -> Result<ExperimentResult> {
    let mut cells = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let keep: Vec<usize> = subset
            .iter()
            .map(|m| model.encoder_index(m))
            .collect::<Result<_>>()?;
        let mut masked = dataset.clone();
        for s in &mut masked.samples {
            for m in (0..model.encoders.len()).filter(|m| !keep.contains(m)) {
                s.erase_modality(m);
            }
        }
        let report = evaluate(model, &masked, options)?;
        cells.push(CellResult {
            arm: MULTIMODN_ARM.to_owned(),
            mode: MissingnessMode::None,
            rate: 0.0,
            test_condition: subset_label(subset),
            report: Some(report),
            failure: None,
        });
    }
    let mut h = Sha256::new();
    h.update(model.config_hash());
    h.update(serde_json::to_vec(&(subsets, options))?);
    Ok(ExperimentResult {
        experiment: "inference-combinations".to_owned(),
        config_hash: hex::encode(h.finalize())[..16].to_owned(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::EvalOptions;

    fn tiny_config() -> ExperimentConfig {
        let mut spec = SynthSpec {
            n_samples: 200,
            ..SynthSpec::default()
        };
        spec.tasks.truncate(1);
        let mut config = ExperimentConfig::synthetic(spec);
        config.folds = 2;
        config.training.epochs = 2;
        config.missingness = Some(MissingnessGrid {
            modality: "m1".into(),
            modes: vec![MissingnessMode::Mnar],
            rates: vec![0.0, 0.5],
            target_class: 1,
            test_conditions: default_conditions(),
        });
        config
    }

    #[test]
    fn rate_zero_conditions_coincide_and_runs_repeat() {
        let config = tiny_config();
        let a = run_mnar_grid(&config).unwrap();
        assert_eq!(a.cells.len(), 2 * 2 * 3);
        assert!(a.cells.iter().all(|c| c.failure.is_none()));
        for arm in [MULTIMODN_ARM, PFUSION_ARM] {
            let clean = &a.cell(arm, MissingnessMode::Mnar, 0.0, "clean").unwrap().report;
            for cond in ["same", "flipped"] {
                assert_eq!(&a.cell(arm, MissingnessMode::Mnar, 0.0, cond).unwrap().report, clean);
            }
        }
        assert_eq!(a, run_mnar_grid(&config).unwrap());
        assert_eq!(a.config_hash, config.hash());
    }

    #[test]
    fn long_csv_has_one_row_per_metric() {
        let result = run_mnar_grid(&tiny_config()).unwrap();
        let csv = result.to_long_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "arm,mode,rate,test_condition,task,metric,value,ci_low,ci_high");
        let metrics: usize = result
            .cells
            .iter()
            .map(|c| c.report.as_ref().map_or(1, |r| r.tasks.iter().map(|t| t.metrics.len()).sum()))
            .sum();
        assert_eq!(lines.count(), metrics);
        let back: ExperimentResult = serde_json::from_str(&result.to_json().unwrap()).unwrap();
        assert_eq!(back, result);
    }

    #[test]
    fn missing_grid_is_a_contract_error() {
        let mut config = tiny_config();
        config.missingness = None;
        assert!(matches!(run_mnar_grid(&config), Err(Error::Contract(_))));
        config.folds = 1;
        assert!(config.validate().is_err());
    }

    #[test]
    fn full_subset_matches_standard_evaluation() {
        let data = generate_synthetic(&SynthSpec {
            n_samples: 120,
            ..SynthSpec::default()
        })
        .unwrap();
        let model = multimodn_for(&data, &TrainingConfig::default(), 3).unwrap();
        let options = EvalOptions::default();
        let subsets = vec![
            vec!["m0".to_owned(), "m1".to_owned()],
            vec!["m0".to_owned()],
            vec![],
        ];
        let result = run_inference_combinations(&model, &data, &subsets, &options).unwrap();
        assert_eq!(result.cells.len(), 3);
        assert_eq!(result.cells[0].test_condition, "m0+m1");
        assert_eq!(result.cells[2].test_condition, "none");
        assert_eq!(result.cells[0].report.as_ref().unwrap(), &evaluate(&model, &data, &options).unwrap());
        // with nothing encoded every sample gets the prior: AUROC is 0.5
        assert_eq!(result.cells[2].report.as_ref().unwrap().estimate("y0", "auroc"), Some(0.5));
        assert_eq!(result.config_hash.len(), 16);
        let other = run_inference_combinations(&model, &data, &subsets[..1], &options).unwrap();
        assert_ne!(other.config_hash, result.config_hash);
        assert!(run_inference_combinations(&model, &data, &[vec!["m9".to_owned()]], &options).is_err());
    }

    #[test]
    fn reference_config_is_valid() {
        let config = mnar_reference_config();
        config.validate().unwrap();
        let grid = config.missingness.unwrap();
        assert_eq!(grid.rates, vec![0.0, 0.1, 0.5, 0.8]);
        assert_eq!(grid.modality, "m1");
    }

    #[test]
    fn committed_reference_file_matches() {
        let file: ExperimentConfig =
            serde_json::from_str(include_str!("../../../configs/mnar_reference.json")).unwrap();
        assert_eq!(file, mnar_reference_config());
    }

    #[test]
    fn parity_needs_two_seeds_and_tasks() {
        let mut config = ExperimentConfig::synthetic(SynthSpec {
            n_samples: 100,
            ..SynthSpec::default()
        });
        config.seeds = vec![0];
        assert!(run_parity(&config).is_err());
    }
}
