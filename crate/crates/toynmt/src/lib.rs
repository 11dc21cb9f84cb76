//! Desk-scale translation harness: synthetic parallel data with a known
//! vocabulary overlap, a small transformer encoder-decoder trained from
//! scratch under any smoothing spec, greedy decoding, evaluation, and
//! multi-seed comparisons.

pub mod dropout;
pub mod kernel;
pub mod matrix;
pub mod tape;

pub use kernel::ModelScalar;
pub use matrix::Matrix;
pub mod data;
pub mod decode;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod train;

pub use data::{gen_synthetic, EncodedPair, ParallelCorpus, SentencePair, Split, SyntheticTaskSpec};
pub use decode::{greedy_decode, Decoded};
pub use eval::{evaluate, EvalMetrics, EvalOptions};
pub use experiment::{compare, run_one, ExperimentReport, RunReport, RunSettings};
pub use model::{Model, ModelConfig, SequenceScorer};
pub use train::{train, TrainConfig, TrainError, TrainReport};

/// Double-precision model, used by the command-line tool.
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
