//! Language-aware label smoothing for shared-vocabulary sequence-to-sequence
//! training.
//!
//! A joint vocabulary is split into source-only, common and target-only
//! tokens ([`vocab`]). Label distributions are then built so that smoothing
//! mass can be steered between those classes ([`smoothing`]), scored with a
//! soft-target cross-entropy ([`loss`]), and evaluated with calibration and
//! translation metrics ([`metrics`]).
//!
//! The numeric code is generic over [`Scalar`] / [`Real`]. `f64` is the
//! working type; [`Exact`] (a 64-bit rational) can be used wherever only field
//! arithmetic is needed, which makes the smoothing builders and ECE binning
//! checkable without rounding.

pub mod loss;
pub mod metrics;
pub mod scalar;
pub mod smoothing;
pub mod vocab;

pub use scalar::{Real, Scalar};
pub use smoothing::{
    mls_as_wls_betas, one_hot, smooth_masked, smooth_uniform, smooth_weighted, Betas,
    LabelDistribution, SmoothingMode, SmoothingSpec, TargetBuilder,
};
pub use vocab::{
    build_joint, partition, Category, CategoryCounts, CategoryPartition, CategoryStats,
    SpecialTokens, Vocabulary,
};

/// Exact rational scalar.
pub type Exact = num_rational::Ratio<i64>;

pub type Distribution = LabelDistribution<f64>;
pub type ExactDistribution = LabelDistribution<Exact>;
pub type Spec = SmoothingSpec<f64>;
pub type ExactSpec = SmoothingSpec<Exact>;
pub type CalibrationReport = metrics::CalibrationReport<f64>;
pub type PredictionSample = metrics::PredictionSample<f64>;
