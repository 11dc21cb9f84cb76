//! Command implementations behind the `mlsmooth` binary.
//!
//! Each command returns a [`CliError`] whose [`CliError::exit_code`] the
//! binary passes to the OS. A run directory looks like
//!
//! ```text
//! config.toml                   resolved config, out_dir = this directory
//! data/                         generated corpus, vocabularies, partition.tsv
//! {label}-seed{seed}.model.bin  trained parameters
//! {label}-seed{seed}.train.json curves and dev metrics
//! {label}-seed{seed}.eval.json  dev and test metrics of the saved model
//! compare.json                  spec x seed grid
//! ```

pub mod config;

use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};

use mlsmooth_core::{
    partition, CategoryPartition, SmoothingMode, SmoothingSpec, SpecialTokens, TargetBuilder,
    Vocabulary,
};
use mlsmooth_toynmt::{
    compare, evaluate, gen_synthetic, run_one, EvalMetrics, Model, ModelScalar, ParallelCorpus,
    RunReport, Split,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{parse_betas, ConfigError, Precision, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{path} exists with different contents; pass --force to overwrite")]
    Exists { path: PathBuf },
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged(_) => 3,
            _ => 2,
        }
    }
}

/// `Variant: message`, using the variant name from the `Debug` output.
fn named<E: Debug + std::fmt::Display>(e: &E) -> String {
    let dbg = format!("{e:?}");
    let name = dbg.split(['(', ' ', '{']).next().unwrap_or_default();
    format!("{name}: {e}")
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Writes `bytes` unless `path` already holds different contents and
/// `force` is off. Identical contents are left untouched.
pub fn write_file(path: &Path, bytes: &[u8], force: bool) -> Result<(), CliError> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(());
        }
        if !force {
            return Err(CliError::Exists { path: path.to_owned() });
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report is serializable");
    text.push('\n');
    write_file(path, text.as_bytes(), force)
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::parse(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {}", path.display(), named(&e))))
}

pub struct PartitionArgs<'a> {
    pub joint: &'a Path,
    pub src: &'a Path,
    pub tgt: &'a Path,
    pub special: Option<&'a str>,
    pub out: &'a Path,
    pub force: bool,
}

/// Writes the partition TSV and returns the category summary.
pub fn cmd_partition(args: &PartitionArgs) -> Result<String, CliError> {
    let joint = read_vocab(args.joint)?;
    let src = read_vocab(args.src)?;
    let tgt = read_vocab(args.tgt)?;
    let special = match args.special {
        Some(list) => SpecialTokens::from_list(list.split(',').map(str::trim).filter(|t| !t.is_empty())),
        None => SpecialTokens::standard(),
    };
    let p = partition(&joint, &src, &tgt, &special).map_err(|e| CliError::Data(named(&e)))?;
    write_file(args.out, p.to_tsv().as_bytes(), args.force)?;
    Ok(p.stats().to_string())
}

pub struct SmoothArgs<'a> {
    pub partition: &'a Path,
    pub correct: &'a str,
    pub alpha: f64,
    pub mode: &'a str,
    pub betas: Option<&'a str>,
}

/// Builds one target distribution and returns its dump.
pub fn cmd_smooth(args: &SmoothArgs) -> Result<String, CliError> {
    let part = CategoryPartition::parse_tsv(&read_text(args.partition)?)
        .map_err(|e| CliError::Data(format!("{}: {}", args.partition.display(), named(&e))))?;
    let id = part
        .joint()
        .id(args.correct)
        .ok_or_else(|| CliError::Data(format!("token {:?} is not in {}", args.correct, args.partition.display())))?;
    let mode: SmoothingMode = args.mode.parse().map_err(CliError::Data)?;
    let betas = match args.betas {
        Some(b) => Some(parse_betas(b).ok_or_else(|| CliError::Data(format!("cannot parse betas {b:?}")))?),
        None => None,
    };
    let spec = match mode {
        SmoothingMode::OneHot => SmoothingSpec::one_hot(),
        SmoothingMode::Uniform => SmoothingSpec::uniform(args.alpha),
        SmoothingMode::Masked => SmoothingSpec::masked(args.alpha),
        SmoothingMode::Weighted => SmoothingSpec::weighted(
            args.alpha,
            betas.ok_or_else(|| CliError::Data("weighted mode needs --betas".into()))?,
        ),
    };
    let smooth_err = |e: mlsmooth_core::smoothing::SmoothingError| CliError::Data(named(&e));
    let dist = TargetBuilder::new(&part, spec).map_err(smooth_err)?.build(id).map_err(smooth_err)?;
    Ok(dist.to_dump())
}

/// Reads a config file. `out` replaces its `out_dir`.
pub fn load_config(path: &Path, out: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::parse(&read_text(path)?).map_err(|e| CliError::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    if let Some(out) = out {
        cfg.out_dir = out.to_owned();
    }
    Ok(cfg)
}

fn config_error(cfg: &RunConfig, message: String) -> CliError {
    CliError::Config {
        path: cfg.out_dir.join("config.toml"),
        message,
    }
}

/// Generates the corpus for `cfg` and archives it with the resolved config.
fn prepare_run(cfg: &RunConfig, force: bool) -> Result<ParallelCorpus, CliError> {
    let corpus = gen_synthetic(&cfg.task()).map_err(|e| config_error(cfg, named(&e)))?;
    write_file(&cfg.out_dir.join("config.toml"), cfg.to_toml().as_bytes(), force)?;
    let data = cfg.out_dir.join("data");
    if data.join("partition.tsv").exists() {
        let existing = ParallelCorpus::read_dir(&data).map_err(|e| CliError::Data(e.to_string()))?;
        if existing != corpus && !force {
            return Err(CliError::Exists { path: data });
        }
    }
    corpus.write_dir(&data).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(corpus)
}

pub fn cmd_gen(cfg: &RunConfig, force: bool) -> Result<String, CliError> {
    let corpus = prepare_run(cfg, force)?;
    Ok(format!(
        "wrote {} train / {} dev / {} test pairs to {}\n{}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        cfg.out_dir.join("data").display(),
        corpus.partition.stats()
    ))
}

fn run_stem(cfg: &RunConfig) -> String {
    format!("{}-seed{}", cfg.spec().label(), cfg.seed)
}

fn train_error(cfg: &RunConfig, e: mlsmooth_toynmt::TrainError) -> CliError {
    if e.is_divergence() {
        CliError::Diverged(named(&e))
    } else {
        config_error(cfg, named(&e))
    }
}

fn check_spec(cfg: &RunConfig) -> Result<SmoothingSpec<f64>, CliError> {
    let spec = cfg.spec();
    spec.validate().map_err(|e| config_error(cfg, named(&e)))?;
    Ok(spec)
}

fn train_typed<S: ModelScalar>(cfg: &RunConfig, corpus: &ParallelCorpus, force: bool) -> Result<RunReport, CliError> {
    let spec = check_spec(cfg)?;
    let (model, report) = run_one::<S>(corpus, &spec, &cfg.settings(), cfg.seed).map_err(|e| train_error(cfg, e))?;
    let stem = run_stem(cfg);
    write_file(&cfg.out_dir.join(format!("{stem}.model.bin")), &model.params_to_bytes(), force)?;
    write_json(&cfg.out_dir.join(format!("{stem}.train.json")), &report, force)?;
    Ok(report)
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<RunReport, CliError> {
    let corpus = prepare_run(cfg, force)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &corpus, force),
        Precision::F64 => train_typed::<f64>(cfg, &corpus, force),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub seed: u64,
    pub dev: EvalMetrics,
    pub test: EvalMetrics,
}

fn eval_typed<S: ModelScalar>(cfg: &RunConfig, corpus: &ParallelCorpus, model_path: &Path) -> Result<EvalReport, CliError> {
    let settings = cfg.settings();
    let model = Model::<S>::load(settings.model.clone(), corpus.joint.len(), model_path)
        .map_err(|e| CliError::Data(named(&e)))?;
    let run = |split| {
        evaluate(&model, &corpus.encode(split), &corpus.partition, &settings.eval).map_err(|e| CliError::Data(named(&e)))
    };
    Ok(EvalReport {
        label: cfg.spec().label(),
        seed: cfg.seed,
        dev: run(Split::Dev)?,
        test: run(Split::Test)?,
    })
}

/// Evaluates the model trained in `run_dir` on its dev and test splits.
pub fn cmd_eval(run_dir: &Path, force: bool) -> Result<EvalReport, CliError> {
    let cfg = load_config(&run_dir.join("config.toml"), Some(run_dir))?;
    let corpus = ParallelCorpus::read_dir(&run_dir.join("data")).map_err(|e| CliError::Data(e.to_string()))?;
    let stem = run_stem(&cfg);
    let model_path = run_dir.join(format!("{stem}.model.bin"));
    let report = match cfg.precision {
        Precision::F32 => eval_typed::<f32>(&cfg, &corpus, &model_path)?,
        Precision::F64 => eval_typed::<f64>(&cfg, &corpus, &model_path)?,
    };
    write_json(&run_dir.join(format!("{stem}.eval.json")), &report, force)?;
    Ok(report)
}

pub fn cmd_compare(cfg: &RunConfig, force: bool) -> Result<mlsmooth_toynmt::ExperimentReport, CliError> {
    let specs = cfg.compare_specs().map_err(|e| config_error(cfg, e.to_string()))?;
    let corpus = prepare_run(cfg, force)?;
    let settings = cfg.settings();
    let report = match cfg.precision {
        Precision::F32 => compare::<f32>(&corpus, &specs, &settings, &cfg.compare_seeds),
        Precision::F64 => compare::<f64>(&corpus, &specs, &settings, &cfg.compare_seeds),
    }
    .map_err(|e| train_error(cfg, e))?;
    write_json(&cfg.out_dir.join("compare.json"), &report, force)?;
    Ok(report)
}

/// Human-readable final metrics.
pub fn metrics_table(m: &EvalMetrics) -> String {
    EvalMetrics::NAMES
        .iter()
        .map(|n| format!("{n}\t{:.6}", m.get(n).unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join("\n")
}
