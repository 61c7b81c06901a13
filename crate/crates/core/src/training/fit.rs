use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, evaluate_per_state, EvalOptions, TimestepSelection};
use super::objective::{compute_batch_grads, mean_loss, BatchContext, LossOptions};
use crate::baseline::{evaluate_pfusion, pfusion_loss_and_grads, resolve_task, PFusion};
use crate::data::{Dataset, MultiModSample};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::MultiModN;
use crate::numerics::{adam_step, clip_by_global_norm, AdamConfig, AdamState, ParamGradients, Parameterized};

/// The validation metric that selects the retained snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSelector {
    pub task: String,
    pub metric: String,
}

impl MetricSelector {
    pub fn new(task: impl Into<String>, metric: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            metric: metric.into(),
        }
    }

    pub fn lower_is_better(&self) -> bool {
        self.metric == "mse"
    }

    fn improves(&self, candidate: f64, best: f64) -> bool {
        if self.lower_is_better() {
            candidate < best
        } else {
            candidate > best
        }
    }

    /// First classification task's AUROC, else the first task's MSE.
    pub fn default_for(dataset: &Dataset) -> Result<Self> {
        let tasks = &dataset.schema.tasks;
        if let Some(t) = tasks.iter().find(|t| t.kind.is_classification()) {
            return Ok(Self::new(&t.name, "auroc"));
        }
        tasks
            .first()
            .map(|t| Self::new(&t.name, "mse"))
            .ok_or_else(|| Error::contract("dataset has no tasks"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub hidden_size: usize,
    pub state_size: usize,
    /// `None` picks [`MetricSelector::default_for`] the validation set.
    pub best_model_metric: Option<MetricSelector>,
    pub include_step0_loss: bool,
    pub final_state_only: bool,
    pub randomize_encoder_order: bool,
    pub freeze_initial_state: bool,
    pub task_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub eval: EvalOptions,
    /// Record validation metrics at every state index each epoch.
    pub log_state_metrics: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            dropout: 0.1,
            hidden_size: 32,
            state_size: 20,
            best_model_metric: None,
            include_step0_loss: true,
            final_state_only: false,
            randomize_encoder_order: false,
            freeze_initial_state: false,
            task_weights: None,
            seed: 0,
            eval: EvalOptions::default(),
            log_state_metrics: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden_size", self.hidden_size),
            ("state_size", self.state_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be finite and non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::contract("clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            include_step0_loss: self.include_step0_loss,
            final_state_only: self.final_state_only,
            task_weights: self.task_weights.clone(),
            freeze_initial_state: self.freeze_initial_state,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// A model the fit loop can train: MultiModN or the P-Fusion baseline.
pub trait Learner: Parameterized + Clone + Sync {
    fn batch_loss_and_grads(
        &self,
        dataset: &Dataset,
        batch: &[&MultiModSample],
        config: &TrainingConfig,
        ctx: &BatchContext,
    ) -> Result<(f64, ParamGradients)>;

    fn validation_loss(&self, dataset: &Dataset, config: &TrainingConfig) -> Result<f64>;

    fn evaluate(&self, dataset: &Dataset, options: &EvalOptions) -> Result<MetricsReport>;

    /// Metrics at each state index, where the model has intermediate states.
    fn evaluate_states(&self, _dataset: &Dataset, _options: &EvalOptions) -> Result<Option<Vec<MetricsReport>>> {
        Ok(None)
    }
}

impl Learner for MultiModN {
    fn batch_loss_and_grads(
        &self,
        _dataset: &Dataset,
        batch: &[&MultiModSample],
        config: &TrainingConfig,
        ctx: &BatchContext,
    ) -> Result<(f64, ParamGradients)> {
        compute_batch_grads(self, batch, &config.loss_options(), ctx)
    }

    fn validation_loss(&self, dataset: &Dataset, config: &TrainingConfig) -> Result<f64> {
        let samples: Vec<&MultiModSample> = dataset.samples.iter().collect();
        mean_loss(self, &samples, &config.loss_options())
    }

    fn evaluate(&self, dataset: &Dataset, options: &EvalOptions) -> Result<MetricsReport> {
        evaluate(self, dataset, options)
    }

    fn evaluate_states(&self, dataset: &Dataset, options: &EvalOptions) -> Result<Option<Vec<MetricsReport>>> {
        evaluate_per_state(self, dataset, options).map(Some)
    }
}

/// The single timestep P-Fusion trains on: the scored one, or the last when
/// scores are averaged over timesteps.
pub fn pfusion_timestep(options: &EvalOptions, timesteps: usize) -> Result<usize> {
    match options.timesteps {
        TimestepSelection::At { .. } => Ok(options.timesteps.timesteps(timesteps)?[0]),
        TimestepSelection::Last | TimestepSelection::Average => Ok(timesteps - 1),
    }
}

impl Learner for PFusion {
    fn batch_loss_and_grads(
        &self,
        dataset: &Dataset,
        batch: &[&MultiModSample],
        config: &TrainingConfig,
        ctx: &BatchContext,
    ) -> Result<(f64, ParamGradients)> {
        let task = resolve_task(self, dataset)?;
        let t = pfusion_timestep(&config.eval, dataset.timesteps)?;
        pfusion_loss_and_grads(self, batch, task, t, ctx)
    }

    fn validation_loss(&self, dataset: &Dataset, config: &TrainingConfig) -> Result<f64> {
        let samples: Vec<&MultiModSample> = dataset.samples.iter().collect();
        self.batch_loss_and_grads(dataset, &samples, config, &BatchContext::eval())
            .map(|(l, _)| l)
    }

    fn evaluate(&self, dataset: &Dataset, options: &EvalOptions) -> Result<MetricsReport> {
        evaluate_pfusion(self, dataset, options)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_metrics: Option<Vec<MetricsReport>>,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.val_metrics == other.val_metrics
            && self.state_metrics == other.state_metrics
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_metric: MetricSelector,
    pub best_value: Option<f64>,
    pub config: TrainingConfig,
    pub wall_clock_seconds: f64,
}

/// Wall-clock time is excluded.
impl PartialEq for FitReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_metric == other.best_metric
            && self.best_value.map(f64::to_bits) == other.best_value.map(f64::to_bits)
            && self.config == other.config
    }
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The selected metric per epoch; `None` where it was undefined.
    pub fn metric_curve(&self) -> Vec<Option<f64>> {
        self.epochs
            .iter()
            .map(|e| e.val_metrics.estimate(&self.best_metric.task, &self.best_metric.metric))
            .collect()
    }

    fn metric_columns(reports: &[&MetricsReport]) -> Vec<(String, String)> {
        let mut cols: Vec<(String, String)> = Vec::new();
        for r in reports {
            for t in &r.tasks {
                for m in t.metrics.keys() {
                    let key = (t.task.clone(), m.clone());
                    if !cols.contains(&key) {
                        cols.push(key);
                    }
                }
            }
        }
        cols
    }

    fn cells(report: &MetricsReport, cols: &[(String, String)]) -> Vec<String> {
        cols.iter()
            .map(|(t, m)| report.estimate(t, m).map(|v| v.to_string()).unwrap_or_default())
            .collect()
    }

    /// One row per epoch: epoch, train_loss, val_loss, then `task.metric` columns.
    pub fn epochs_csv(&self) -> Result<String> {
        let reports: Vec<&MetricsReport> = self.epochs.iter().map(|e| &e.val_metrics).collect();
        let cols = Self::metric_columns(&reports);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_owned(), "train_loss".to_owned(), "val_loss".to_owned()];
        header.extend(cols.iter().map(|(t, m)| format!("{t}.{m}")));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()];
            row.extend(Self::cells(&e.val_metrics, &cols));
            w.write_record(&row).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Per-state validation log: one row per (epoch, state index).
    pub fn state_metrics_csv(&self) -> Result<Option<String>> {
        if self.epochs.iter().all(|e| e.state_metrics.is_none()) {
            return Ok(None);
        }
        let reports: Vec<&MetricsReport> = self
            .epochs
            .iter()
            .flat_map(|e| e.state_metrics.iter().flatten())
            .collect();
        let cols = Self::metric_columns(&reports);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_owned(), "state".to_owned()];
        header.extend(cols.iter().map(|(t, m)| format!("{t}.{m}")));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.epochs {
            for (k, r) in e.state_metrics.iter().flatten().enumerate() {
                let mut row = vec![e.epoch.to_string(), k.to_string()];
                row.extend(Self::cells(r, &cols));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        finish_csv(w).map(Some)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(None, e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::format(None, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64 + 1) << 32) ^ (batch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Trains `model` in place of a copy and returns the best snapshot.
pub fn fit<L: Learner>(model: &L, train: &Dataset, val: &Dataset, config: &TrainingConfig) -> Result<(L, FitReport)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("train and validation sets must be non-empty"));
    }
    if train.schema != val.schema {
        return Err(Error::contract("train and validation schemas differ"));
    }
    let selector = match &config.best_model_metric {
        Some(s) => {
            val.schema.task_index(&s.task)?;
            s.clone()
        }
        None => MetricSelector::default_for(val)?,
    };
    let start = Instant::now();
    let mut current = model.clone();
    let mut adam = AdamState::new(&current, config.adam())?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(usize, f64, L)> = None;
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&MultiModSample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let ctx = BatchContext {
                dropout_rate: config.dropout,
                randomize_order: config.randomize_encoder_order,
                seed: batch_seed(config.seed, epoch, b),
                train: true,
            };
            let (loss, grads) = current.batch_loss_and_grads(train, &batch, config, &ctx)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is {loss} at epoch {}, batch index {b}",
                    epoch + 1
                )));
            }
            let clipped = clip_by_global_norm(&grads, config.clip_norm).map_err(|e| {
                Error::Numeric(format!("epoch {}, batch index {b}: {e}", epoch + 1))
            })?;
            adam_step(&mut current, &clipped, &mut adam)?;
            weighted += loss * batch.len() as f64;
        }
        let val_loss = current.validation_loss(val, config)?;
        let val_metrics = current.evaluate(val, &config.eval)?;
        let state_metrics = if config.log_state_metrics {
            current.evaluate_states(val, &config.eval)?
        } else {
            None
        };
        let value = val_metrics.estimate(&selector.task, &selector.metric);
        log::debug!(
            "epoch {} train_loss {:.5} val_loss {:.5} {}.{} {:?}",
            epoch + 1,
            weighted / train.len() as f64,
            val_loss,
            selector.task,
            selector.metric,
            value
        );
        if let Some(v) = value {
            let better = match &best {
                None => true,
                Some((_, b, _)) => selector.improves(v, *b),
            };
            if better {
                best = Some((epoch + 1, v, current.clone()));
            }
        }
        records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: weighted / train.len() as f64,
            val_loss,
            val_metrics,
            state_metrics,
        });
    }
    let (best_epoch, best_value, best_model) = match best {
        Some((e, v, m)) => (e, Some(v), m),
        None => {
            log::warn!(
                "{}.{} was undefined at every epoch; keeping the final parameters",
                selector.task,
                selector.metric
            );
            (config.epochs, None, current)
        }
    };
    let report = FitReport {
        epochs: records,
        best_epoch,
        best_metric: selector,
        best_value,
        config: config.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best_model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, stratified_kfold, SynthSpec};
    use crate::model::{init_model, Architecture};

    fn setup(n: usize) -> (Dataset, Dataset, MultiModN) {
        let data = generate_synthetic(&SynthSpec {
            n_samples: n,
            ..SynthSpec::default()
        })
        .unwrap();
        let fold = &stratified_kfold(&data, 5, 0).unwrap()[0];
        let model = init_model(&Architecture::new(data.schema.clone(), 6, 8), 1).unwrap();
        (data.subset(&fold.train), data.subset(&fold.val), model)
    }

    fn quick() -> TrainingConfig {
        TrainingConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 1e-2,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (train, val, model) = setup(120);
        let config = TrainingConfig {
            learning_rate: 0.0,
            dropout: 0.0,
            ..quick()
        };
        let (best, report) = fit(&model, &train, &val, &config).unwrap();
        assert_eq!(best, model);
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.val_loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]));
        // batch composition changes the summation order only
        assert!(report.epochs.iter().all(|e| (e.train_loss - report.epochs[0].train_loss).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_report_and_model() {
        let (train, val, model) = setup(120);
        let (a, ra) = fit(&model, &train, &val, &quick()).unwrap();
        let (b, rb) = fit(&model, &train, &val, &quick()).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        let (_, rc) = fit(&model, &train, &val, &TrainingConfig { seed: 9, ..quick() }).unwrap();
        assert_ne!(ra, rc);
    }

    #[test]
    fn retained_snapshot_is_the_best_epoch() {
        let (train, val, model) = setup(160);
        let (best, report) = fit(&model, &train, &val, &quick()).unwrap();
        assert_eq!(report.epochs.len(), 4);
        let curve = report.metric_curve();
        let top = curve.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_value, Some(top));
        assert_eq!(curve[report.best_epoch - 1], Some(top));
        let again = evaluate(&best, &val, &EvalOptions::default()).unwrap();
        assert_eq!(again.estimate("y0", "auroc"), Some(top));
    }

    #[test]
    fn mse_selection_prefers_lower() {
        let (train, val, model) = setup(120);
        let config = TrainingConfig {
            best_model_metric: Some(MetricSelector::new("r0", "mse")),
            ..quick()
        };
        let (_, report) = fit(&model, &train, &val, &config).unwrap();
        let low = report.metric_curve().into_iter().flatten().fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_value, Some(low));
    }

    #[test]
    fn nan_loss_aborts_naming_the_batch() {
        let (train, val, mut model) = setup(60);
        model.decoders[0].stack.layers[2].bias[0] = f64::NAN;
        let err = fit(&model, &train, &val, &quick()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("batch index 0"), "{err}");
    }

    #[test]
    fn csv_logs_have_one_row_per_epoch_and_state() {
        let (train, val, model) = setup(80);
        let config = TrainingConfig {
            log_state_metrics: true,
            ..quick()
        };
        let (_, report) = fit(&model, &train, &val, &config).unwrap();
        let epochs = report.epochs_csv().unwrap();
        assert_eq!(epochs.lines().count(), 1 + 4);
        assert!(epochs.starts_with("epoch,train_loss,val_loss,"));
        let states = report.state_metrics_csv().unwrap().unwrap();
        assert_eq!(states.lines().count(), 1 + 4 * 3);
        let json = report.to_json().unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            TrainingConfig { batch_size: 0, ..quick() },
            TrainingConfig { clip_norm: 0.0, ..quick() },
            TrainingConfig { dropout: 1.0, ..quick() },
            TrainingConfig { learning_rate: f64::NAN, ..quick() },
        ] {
            assert!(bad.validate().is_err());
        }
        let (train, val, model) = setup(60);
        let config = TrainingConfig {
            best_model_metric: Some(MetricSelector::new("nope", "auroc")),
            ..quick()
        };
        assert!(fit(&model, &train, &val, &config).is_err());
    }
}
