//! Flat run configuration.

use std::path::PathBuf;
use std::str::FromStr;

use mlsmooth_core::{Betas, Exact, SmoothingMode, SmoothingSpec};
use mlsmooth_toynmt::{EvalOptions, ModelConfig, RunSettings, SyntheticTaskSpec, TrainConfig};
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every parameter of a run. Missing keys take the defaults below; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub seed: u64,

    pub n_source_only: usize,
    pub n_common: usize,
    pub n_target_only: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_pairs: usize,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    pub common_token_rate: f64,
    pub data_seed: u64,

    /// Adds a second source language that translates into the same
    /// target-only tokens; its corpus is concatenated with the first.
    pub second_pair: bool,
    pub second_n_source_only: usize,
    pub second_n_common: usize,
    pub second_min_len: usize,
    pub second_max_len: usize,
    pub second_train_pairs: usize,
    pub second_dev_pairs: usize,
    pub second_test_pairs: usize,
    pub second_common_token_rate: f64,
    pub second_data_seed: u64,

    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_positions: usize,

    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub batch_tokens: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub train_eval_pairs: usize,

    pub mode: SmoothingMode,
    pub alpha: f64,
    pub beta_target: f64,
    pub beta_common: f64,
    pub beta_source: f64,

    pub ece_bins: usize,
    pub decode_extra: usize,
    pub eval_batch_size: usize,

    pub compare_seeds: Vec<u64>,
    /// `onehot`, `uniform`, `masked` or `weighted:t,c,s`; all use `alpha`.
    pub compare_specs: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = SyntheticTaskSpec::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let eval = EvalOptions::default();
        RunConfig {
            out_dir: PathBuf::from("runs/default"),
            precision: Precision::F32,
            seed: 1,
            n_source_only: task.n_source_only,
            n_common: task.n_common,
            n_target_only: task.n_target_only,
            min_len: task.min_len,
            max_len: task.max_len,
            train_pairs: task.train_pairs,
            dev_pairs: task.dev_pairs,
            test_pairs: task.test_pairs,
            common_token_rate: task.common_token_rate,
            data_seed: task.seed,
            second_pair: false,
            second_n_source_only: 16,
            second_n_common: 4,
            second_min_len: task.min_len,
            second_max_len: task.max_len,
            second_train_pairs: task.train_pairs / 2,
            second_dev_pairs: task.dev_pairs / 2,
            second_test_pairs: task.test_pairs / 2,
            second_common_token_rate: task.common_token_rate,
            second_data_seed: 2,
            layers: model.layers,
            model_dim: model.model_dim,
            heads: model.heads,
            ffn_dim: model.ffn_dim,
            dropout: model.dropout,
            max_positions: model.max_positions,
            peak_lr: train.peak_lr,
            warmup_steps: train.warmup_steps,
            batch_tokens: train.batch_tokens,
            max_steps: train.max_steps,
            eval_interval: train.eval_interval,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            weight_decay: train.weight_decay,
            train_eval_pairs: train.train_eval_pairs,
            mode: SmoothingMode::Masked,
            alpha: 0.1,
            beta_target: 1.0 / 3.0,
            beta_common: 1.0 / 3.0,
            beta_source: 1.0 / 3.0,
            ece_bins: eval.ece_bins,
            decode_extra: eval.decode_extra,
            eval_batch_size: eval.batch_size,
            compare_seeds: vec![1, 2, 3, 4, 5],
            compare_specs: vec![
                "uniform".into(),
                "weighted:1/3,1/3,1/3".into(),
                "weighted:1/2,1/2,0".into(),
                "weighted:1/2,0,1/2".into(),
                "weighted:0,1/2,1/2".into(),
                "weighted:1/2,1/4,1/4".into(),
                "masked".into(),
            ],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad smoothing spec {0:?}: {1}")]
    Spec(String, String),
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    s.parse::<f64>()
        .ok()
        .or_else(|| Exact::from_str(s).ok().and_then(|r| r.to_f64()))
}

/// Parses `t,c,s` where each entry is a decimal or a fraction like `1/3`.
pub fn parse_betas(s: &str) -> Option<Betas<f64>> {
    let parts: Vec<f64> = s.split(',').map(parse_number).collect::<Option<_>>()?;
    match parts[..] {
        [t, c, src] => Some(Betas::new(t, c, src)),
        _ => None,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn task(&self) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            n_source_only: self.n_source_only,
            n_common: self.n_common,
            n_target_only: self.n_target_only,
            min_len: self.min_len,
            max_len: self.max_len,
            train_pairs: self.train_pairs,
            dev_pairs: self.dev_pairs,
            test_pairs: self.test_pairs,
            common_token_rate: self.common_token_rate,
            seed: self.data_seed,
            second_pair: self.second_pair.then(|| {
                Box::new(SyntheticTaskSpec {
                    n_source_only: self.second_n_source_only,
                    n_common: self.second_n_common,
                    n_target_only: self.n_target_only,
                    min_len: self.second_min_len,
                    max_len: self.second_max_len,
                    train_pairs: self.second_train_pairs,
                    dev_pairs: self.second_dev_pairs,
                    test_pairs: self.second_test_pairs,
                    common_token_rate: self.second_common_token_rate,
                    seed: self.second_data_seed,
                    second_pair: None,
                })
            }),
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            model: ModelConfig {
                layers: self.layers,
                model_dim: self.model_dim,
                heads: self.heads,
                ffn_dim: self.ffn_dim,
                dropout: self.dropout,
                max_positions: self.max_positions,
                init_seed: self.seed,
            },
            train: TrainConfig {
                peak_lr: self.peak_lr,
                warmup_steps: self.warmup_steps,
                batch_tokens: self.batch_tokens,
                max_steps: self.max_steps,
                eval_interval: self.eval_interval,
                seed: self.seed,
                adam_beta1: self.adam_beta1,
                adam_beta2: self.adam_beta2,
                adam_eps: self.adam_eps,
                weight_decay: self.weight_decay,
                train_eval_pairs: self.train_eval_pairs,
            },
            eval: EvalOptions {
                ece_bins: self.ece_bins,
                decode_extra: self.decode_extra,
                batch_size: self.eval_batch_size,
            },
        }
    }

    pub fn spec(&self) -> SmoothingSpec<f64> {
        SmoothingSpec {
            alpha: self.alpha,
            mode: self.mode,
            betas: Betas::new(self.beta_target, self.beta_common, self.beta_source),
        }
    }

    pub fn compare_specs(&self) -> Result<Vec<SmoothingSpec<f64>>, ConfigError> {
        self.compare_specs
            .iter()
            .map(|s| {
                let err = |m: &str| ConfigError::Spec(s.clone(), m.to_owned());
                let (mode, betas) = match s.split_once(':') {
                    Some((m, b)) => (m, Some(parse_betas(b).ok_or_else(|| err("expected three betas"))?)),
                    None => (s.as_str(), None),
                };
                let mode = SmoothingMode::from_str(mode.trim()).map_err(|e| err(&e))?;
                let spec = match (mode, betas) {
                    (SmoothingMode::Weighted, Some(b)) => SmoothingSpec::weighted(self.alpha, b),
                    (SmoothingMode::Weighted, None) => return Err(err("weighted needs betas")),
                    (_, Some(_)) => return Err(err("only weighted takes betas")),
                    (SmoothingMode::OneHot, None) => SmoothingSpec::one_hot(),
                    (SmoothingMode::Uniform, None) => SmoothingSpec::uniform(self.alpha),
                    (SmoothingMode::Masked, None) => SmoothingSpec::masked(self.alpha),
                };
                spec.validate().map_err(|e| err(&e.to_string()))?;
                Ok(spec)
            })
            .collect()
    }
}
