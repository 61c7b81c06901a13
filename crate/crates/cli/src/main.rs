//! `multimodn` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
//! Every subcommand that writes files also writes `run_manifest.json` with the
//! resolved configuration and seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use multimodn::baseline::{deserialize_pfusion, evaluate_pfusion, init_pfusion, serialize_pfusion, PFusionArchitecture, PFUSION_TYPE};
use multimodn::data::io::digest;
use multimodn::data::{generate_synthetic, load_dataset, save_dataset, stratified_kfold, Dataset, SynthSpec};
use multimodn::experiments::{prepare_fold, run_inference_combinations, run_mnar_grid, run_parity, ExperimentConfig, ExperimentResult};
use multimodn::interpret::{cumulative_predictions, export_heatmap, importance_scores, Aggregation};
use multimodn::metrics::MetricsReport;
use multimodn::model::document::MULTIMODN_TYPE;
use multimodn::model::{deserialize_model, document_type, init_model, serialize_model, Architecture};
use multimodn::modularity::modularity;
use multimodn::training::{evaluate, fit, EvalOptions, FitReport, TimestepSelection, TrainingConfig};
use multimodn::Error;

#[derive(Parser)]
#[command(name = "multimodn", version, about = "Sequential modular multimodal networks")]
struct Cli {
    /// Worker threads for training and experiment grids (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest.json + data.csv).
    GenSynth {
        /// JSON synthetic spec; the built-in default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on one fold of a dataset directory.
    Train {
        /// JSON training run config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding manifest.json and data.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on a dataset directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `last`, `average`, or a timestep index.
        #[arg(long, default_value = "last", value_parser = parse_timesteps)]
        timesteps: TimestepSelection,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Export importance scores or cumulative predictions as a heatmap CSV.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mode: ExplainMode,
        /// Sample index (cp only).
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, value_enum, default_value_t = AggregationArg::MeanSigned)]
        aggregation: AggregationArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the missingness grid: both arms, every rate, every test condition.
    MnarSim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single- versus multi-task parity over repeated seeds.
    Parity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model under modality subsets without retraining.
    InferCombos {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated modalities, repeatable; `none` is the empty subset.
        /// Every subset when omitted.
        #[arg(long = "subset")]
        subsets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Modularity score of a fully modular model.
    Modularity {
        #[arg(long)]
        modalities: usize,
        #[arg(long)]
        tasks: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainMode {
    Imc,
    Cp,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    MeanSigned,
    MeanAbsolute,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::MeanSigned => Aggregation::MeanSigned,
            AggregationArg::MeanAbsolute => Aggregation::MeanAbsolute,
        }
    }
}

fn parse_timesteps(s: &str) -> Result<TimestepSelection, String> {
    match s {
        "last" => Ok(TimestepSelection::Last),
        "average" => Ok(TimestepSelection::Average),
        n => n
            .parse()
            .map(|timestep| TimestepSelection::At { timestep })
            .map_err(|_| format!("expected last, average or an index, got {n:?}")),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Arm {
    #[default]
    Multimodn,
    Pfusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitConfig {
    folds: usize,
    fold: usize,
    seed: u64,
    normalize: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            fold: 0,
            seed: 0,
            normalize: true,
        }
    }
}

/// Config file of `train`. The model is initialised from `training.seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRun {
    arm: Arm,
    /// P-Fusion's task; the stratification task when omitted.
    task: Option<String>,
    training: TrainingConfig,
    split: SplitConfig,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Contract(_) | Error::Json(_) => 2,
            Error::Numeric(_) => 4,
            Error::Shape { .. } | Error::Format { .. } | Error::UndefinedMetric(_) | Error::Io { .. } => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: --jobs {jobs}: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenSynth { spec, out } => gen_synth(spec.as_deref(), &out),
        Command::Train { config, data, out } => train(config.as_deref(), &data, &out),
        Command::Eval {
            model,
            data,
            out,
            timesteps,
            threshold,
        } => eval(&model, &data, &out, EvalOptions { timesteps, threshold }),
        Command::Explain {
            model,
            data,
            mode,
            sample,
            aggregation,
            out,
        } => explain(&model, &data, mode, sample, aggregation.into(), &out),
        Command::MnarSim { config, out } => experiment(&config, &out, "mnar-sim", run_mnar_grid),
        Command::Parity { config, out } => experiment(&config, &out, "parity", run_parity),
        Command::InferCombos {
            model,
            data,
            subsets,
            out,
        } => infer_combos(&model, &data, &subsets, &out),
        Command::Modularity { modalities, tasks, out } => cmd_modularity(modalities, tasks, out.as_deref()),
    }
}

/// Reads a JSON config; every failure here is a configuration error.
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_owned(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| {
        Error::Io {
            path: path.to_owned(),
            source: e,
        }
        .into()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write(path, text + "\n")
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io {
            path: path.to_owned(),
            source: e,
        }
        .into()
    })
}

fn load_dir(dir: &Path) -> CliResult<Dataset> {
    Ok(load_dataset(&dir.join("manifest.json"), &dir.join("data.csv"))?)
}

fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(digest(&bytes))
}

fn write_manifest(out_dir: &Path, command: &str, config: serde_json::Value, seeds: serde_json::Value, inputs: &[&Path]) -> CliResult {
    let inputs = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), json!(file_digest(p)?))))
        .collect::<CliResult<serde_json::Map<_, _>>>()?;
    write_json(
        &out_dir.join("run_manifest.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seeds": seeds,
            "inputs": inputs,
        }),
    )
}

fn to_value<T: Serialize>(value: &T) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(value).map_err(Error::from)?)
}

fn gen_synth(spec_path: Option<&Path>, out: &Path) -> CliResult {
    let spec: SynthSpec = match spec_path {
        Some(p) => read_config(p)?,
        None => SynthSpec::default(),
    };
    spec.validate().map_err(|e| Failure::config(e.to_string()))?;
    let dataset = generate_synthetic(&spec)?;
    save_dataset(&dataset, out)?;
    let inputs: Vec<&Path> = spec_path.into_iter().collect();
    write_manifest(out, "gen-synth", to_value(&spec)?, json!({ "data": spec.seed }), &inputs)
}

/// A saved model of either arm.
enum Loaded {
    MultiModN(Box<multimodn::model::MultiModN>),
    PFusion(Box<multimodn::baseline::PFusion>),
}

fn load_model(path: &Path) -> CliResult<Loaded> {
    let text = read_text(path)?;
    match document_type(&text)?.as_str() {
        MULTIMODN_TYPE => Ok(Loaded::MultiModN(Box::new(deserialize_model(&text)?))),
        PFUSION_TYPE => Ok(Loaded::PFusion(Box::new(deserialize_pfusion(&text)?))),
        other => Err(Error::Format {
            line: None,
            message: format!("unknown model type {other:?}"),
        }
        .into()),
    }
}

fn write_fit_outputs(out: &Path, model_json: String, report: &FitReport) -> CliResult {
    write(&out.join("model.json"), model_json)?;
    write(&out.join("fit_report.json"), report.to_json()?)?;
    write(&out.join("epochs.csv"), report.epochs_csv()?)?;
    if let Some(csv) = report.state_metrics_csv()? {
        write(&out.join("state_metrics.csv"), csv)?;
    }
    Ok(())
}

fn train(config_path: Option<&Path>, data_dir: &Path, out: &Path) -> CliResult {
    let run: TrainRun = match config_path {
        Some(p) => read_config(p)?,
        None => TrainRun::default(),
    };
    run.training.validate().map_err(|e| Failure::config(e.to_string()))?;
    if run.split.fold >= run.split.folds {
        return Err(Failure::config(format!(
            "split.fold {} out of range for {} folds",
            run.split.fold, run.split.folds
        )));
    }
    let mut dataset = load_dir(data_dir)?;
    if run.arm == Arm::Pfusion {
        let task = match &run.task {
            Some(name) => dataset.schema.task_index(name).map_err(|e| Failure::config(e.to_string()))?,
            None => dataset.stratify_index()?,
        };
        dataset = dataset.select_tasks(&[task]);
    }
    let folds = stratified_kfold(&dataset, run.split.folds, run.split.seed)?;
    let (train_set, val_set, test_set) = prepare_fold(&dataset, &folds[run.split.fold], run.split.normalize)?;
    let seed = run.training.seed;
    match run.arm {
        Arm::Multimodn => {
            let arch = Architecture::new(dataset.schema.clone(), run.training.state_size, run.training.hidden_size);
            let (best, report) = fit(&init_model(&arch, seed)?, &train_set, &val_set, &run.training)?;
            write_fit_outputs(out, serialize_model(&best)?, &report)?;
        }
        Arm::Pfusion => {
            let arch = PFusionArchitecture {
                modalities: dataset.schema.modalities.clone(),
                task: dataset.schema.tasks[0].clone(),
                hidden_size: run.training.hidden_size,
            };
            let (best, report) = fit(&init_pfusion(&arch, seed)?, &train_set, &val_set, &run.training)?;
            write_fit_outputs(out, serialize_pfusion(&best)?, &report)?;
        }
    }
    save_dataset(&test_set, &out.join("test"))?;
    let mut inputs = vec![data_dir.join("manifest.json"), data_dir.join("data.csv")];
    inputs.extend(config_path.map(Path::to_owned));
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        out,
        "train",
        to_value(&run)?,
        json!({ "init": seed, "training": seed, "split": run.split.seed }),
        &inputs,
    )
}

fn eval(model_path: &Path, data_dir: &Path, out: &Path, options: EvalOptions) -> CliResult {
    let dataset = load_dir(data_dir)?;
    let report: MetricsReport = match load_model(model_path)? {
        Loaded::MultiModN(m) => evaluate(&m, &dataset, &options)?,
        Loaded::PFusion(m) => evaluate_pfusion(&m, &dataset, &options)?,
    };
    write_json(&out.join("metrics.json"), &report)?;
    write(&out.join("metrics.csv"), report.to_table_csv())?;
    let manifest = data_dir.join("manifest.json");
    let data = data_dir.join("data.csv");
    write_manifest(out, "eval", to_value(&options)?, json!({}), &[model_path, &manifest, &data])
}

fn multimodn_only(path: &Path, command: &str) -> CliResult<multimodn::model::MultiModN> {
    match load_model(path)? {
        Loaded::MultiModN(m) => Ok(*m),
        Loaded::PFusion(_) => Err(Failure::config(format!("{command} needs a multimodn model"))),
    }
}

fn explain(model_path: &Path, data_dir: &Path, mode: ExplainMode, sample: usize, aggregation: Aggregation, out: &Path) -> CliResult {
    let model = multimodn_only(model_path, "explain")?;
    let dataset = load_dir(data_dir)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_owned(),
        source: e,
    })?;
    let config = match mode {
        ExplainMode::Imc => {
            let scores = importance_scores(&model, &dataset, aggregation)?;
            export_heatmap(&scores, &out.join("imc.csv"))?;
            json!({ "mode": "imc", "aggregation": aggregation })
        }
        ExplainMode::Cp => {
            let s = dataset.samples.get(sample).ok_or_else(|| {
                Failure::config(format!("sample {sample} out of range for {} samples", dataset.len()))
            })?;
            let grid = cumulative_predictions(&model, s)?;
            export_heatmap(&grid, &out.join(format!("cp_{sample}.csv")))?;
            json!({ "mode": "cp", "sample": sample, "sample_id": s.id })
        }
    };
    let manifest = data_dir.join("manifest.json");
    let data = data_dir.join("data.csv");
    write_manifest(out, "explain", config, json!({}), &[model_path, &manifest, &data])
}

fn write_result(out: &Path, result: &ExperimentResult) -> CliResult {
    write(&out.join("result.json"), result.to_json()?)?;
    write(&out.join("result.csv"), result.to_long_csv()?)
}

fn experiment(config_path: &Path, out: &Path, command: &str, driver: fn(&ExperimentConfig) -> multimodn::Result<ExperimentResult>) -> CliResult {
    let config: ExperimentConfig = read_config(config_path)?;
    config.validate().map_err(|e| Failure::config(e.to_string()))?;
    let result = driver(&config)?;
    write_result(out, &result)?;
    write_manifest(
        out,
        command,
        to_value(&config)?,
        json!({ "experiment": config.seed, "repetitions": config.seeds, "training": config.training.seed }),
        &[config_path],
    )
}

fn infer_combos(model_path: &Path, data_dir: &Path, subsets: &[String], out: &Path) -> CliResult {
    let model = multimodn_only(model_path, "infer-combos")?;
    let dataset = load_dir(data_dir)?;
    let subsets: Vec<Vec<String>> = if subsets.is_empty() {
        let names: Vec<&String> = model.encoders.iter().map(|e| &e.modality).collect();
        (0..1usize << names.len())
            .rev()
            .map(|mask| {
                names
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, n)| (*n).clone())
                    .collect()
            })
            .collect()
    } else {
        subsets
            .iter()
            .map(|s| match s.as_str() {
                "none" => Vec::new(),
                s => s.split(',').map(|m| m.trim().to_owned()).collect(),
            })
            .collect()
    };
    let result = run_inference_combinations(&model, &dataset, &subsets, &EvalOptions::default())?;
    write_result(out, &result)?;
    let manifest = data_dir.join("manifest.json");
    let data = data_dir.join("data.csv");
    write_manifest(out, "infer-combos", json!({ "subsets": subsets }), json!({}), &[model_path, &manifest, &data])
}

fn cmd_modularity(modalities: usize, tasks: usize, out: Option<&Path>) -> CliResult {
    let report = modularity(modalities, tasks).map_err(|e| Failure::config(e.to_string()))?;
    println!("modalities {modalities} tasks {tasks} edges {}", report.edges);
    println!("trace {:.12}", report.trace);
    println!("square_sum {:.12}", report.square_sum);
    println!("Q {:.12}", report.q);
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}
