//! Multi-spec, multi-seed comparisons.

use std::collections::BTreeMap;

use mlsmooth_core::{SmoothingMode, SmoothingSpec};
use serde::{Deserialize, Serialize};

use crate::data::{ParallelCorpus, Split};
use crate::eval::{evaluate, EvalMetrics, EvalOptions};
use crate::kernel::ModelScalar;
use crate::model::{Model, ModelConfig};
use crate::train::{train, TrainConfig, TrainError, TrainReport};

/// Everything except the smoothing spec and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub seed: u64,
    pub train: TrainReport,
    pub dev: EvalMetrics,
}

/// Initializes with `seed`, trains with `seed`, evaluates on dev.
pub fn run_one<S: ModelScalar>(
    corpus: &ParallelCorpus,
    spec: &SmoothingSpec<f64>,
    settings: &RunSettings,
    seed: u64,
) -> Result<(Model<S>, RunReport), TrainError> {
    let mc = ModelConfig {
        init_seed: seed,
        ..settings.model.clone()
    };
    let tc = TrainConfig {
        seed,
        ..settings.train.clone()
    };
    let mut model = Model::<S>::new(mc, corpus.joint.len())?;
    let train_report = train(&mut model, corpus, spec, &tc)?;
    let dev = evaluate(&model, &corpus.encode(Split::Dev), &corpus.partition, &settings.eval)?;
    let report = RunReport {
        label: spec.label(),
        seed,
        train: train_report,
        dev,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub label: String,
    pub spec: SmoothingSpec<f64>,
    pub seeds: Vec<u64>,
    pub mean: BTreeMap<String, f64>,
    /// Mean minus the baseline's mean, per metric.
    pub mean_delta: BTreeMap<String, f64>,
    /// This spec minus the baseline at the same seed, per metric.
    pub seed_deltas: BTreeMap<String, Vec<f64>>,
    /// Checkpoint-wise means across seeds.
    pub mean_train_ppl: Vec<f64>,
    pub mean_dev_ppl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline: String,
    pub steps: Vec<usize>,
    /// Ordered by spec, then seed.
    pub runs: Vec<RunReport>,
    pub summary: Vec<SpecSummary>,
}

impl ExperimentReport {
    pub fn run(&self, label: &str, seed: u64) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.label == label && r.seed == seed)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn curve_mean(runs: &[&RunReport], pick: impl Fn(&TrainReport) -> &Vec<f64>) -> Vec<f64> {
    let len = runs.iter().map(|r| pick(&r.train).len()).min().unwrap_or(0);
    (0..len)
        .map(|i| mean(runs.iter().map(|r| pick(&r.train)[i])))
        .collect()
}

/// Summaries of already finished runs. The baseline is the first uniform
/// spec, or the first spec when there is none.
pub fn summarize(specs: &[SmoothingSpec<f64>], runs: Vec<RunReport>) -> ExperimentReport {
    let baseline = specs
        .iter()
        .find(|s| s.mode == SmoothingMode::Uniform)
        .or(specs.first())
        .map(SmoothingSpec::label)
        .unwrap_or_default();
    let by_label = |label: &str| -> Vec<&RunReport> { runs.iter().filter(|r| r.label == label).collect() };
    let base_runs = by_label(&baseline);
    let mut summary = Vec::new();
    for spec in specs {
        let label = spec.label();
        let these = by_label(&label);
        let mut means = BTreeMap::new();
        let mut mean_delta = BTreeMap::new();
        let mut seed_deltas = BTreeMap::new();
        for name in EvalMetrics::NAMES {
            let value = |r: &RunReport| r.dev.get(name).expect("known metric");
            let m = mean(these.iter().map(|r| value(r)));
            let b = mean(base_runs.iter().map(|r| value(r)));
            means.insert(name.to_owned(), m);
            mean_delta.insert(name.to_owned(), m - b);
            let deltas = these
                .iter()
                .filter_map(|r| {
                    base_runs
                        .iter()
                        .find(|b| b.seed == r.seed)
                        .map(|b| value(r) - value(b))
                })
                .collect();
            seed_deltas.insert(name.to_owned(), deltas);
        }
        summary.push(SpecSummary {
            label,
            spec: *spec,
            seeds: these.iter().map(|r| r.seed).collect(),
            mean: means,
            mean_delta,
            seed_deltas,
            mean_train_ppl: curve_mean(&these, |t| &t.train_ppl),
            mean_dev_ppl: curve_mean(&these, |t| &t.dev_ppl),
        });
    }
    ExperimentReport {
        baseline,
        steps: runs.first().map(|r| r.train.steps.clone()).unwrap_or_default(),
        runs,
        summary,
    }
}

/// One run per (spec, seed), executed in spec-then-seed order.
pub fn compare<S: ModelScalar>(
    corpus: &ParallelCorpus,
    specs: &[SmoothingSpec<f64>],
    settings: &RunSettings,
    seeds: &[u64],
) -> Result<ExperimentReport, TrainError> {
    if specs.is_empty() || seeds.is_empty() {
        return Err(TrainError::InvalidConfig(
            "compare needs at least one spec and one seed".into(),
        ));
    }
    let mut runs = Vec::with_capacity(specs.len() * seeds.len());
    for spec in specs {
        for &seed in seeds {
            runs.push(run_one::<S>(corpus, spec, settings, seed)?.1);
        }
    }
    Ok(summarize(specs, runs))
}
