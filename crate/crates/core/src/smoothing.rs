//! Target distributions for one decoder position.
//!
//! Every builder returns a dense vector over the joint vocabulary. The gold
//! token always gets `1 - alpha`; the remaining `alpha` is spread according
//! to the mode:
//!
//! * `Uniform`: evenly over every token, gold included (`alpha / K`).
//! * `Weighted`: class `X` receives `alpha * beta_X` in total, spread evenly
//!   inside the class.
//! * `Masked`: evenly over target-only and common tokens; source-only tokens
//!   get exactly zero.
//!
//! Excluded tokens (padding) get zero in every mode and do not count towards
//! any denominator.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Real, Scalar};
use crate::vocab::{Category, CategoryPartition};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmoothingError {
    #[error("token id {id} out of range for vocabulary of size {k}")]
    IndexOutOfRange { id: usize, k: usize },
    #[error("alpha must lie in [0, 1)")]
    AlphaOutOfRange,
    #[error("betas must be non-negative and sum to 1")]
    InvalidBetas,
    #[error("class {0} has positive beta but no token to receive it")]
    EmptyClassWithMass(Category),
    #[error("no common or target-only token can receive smoothing mass")]
    NoLegalTargets,
    #[error("gold token {0} is excluded from smoothing")]
    CorrectTokenExcluded(usize),
    #[error("malformed distribution dump: {0}")]
    MalformedDump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingMode {
    OneHot,
    Uniform,
    Weighted,
    Masked,
}

impl SmoothingMode {
    pub const ALL: [SmoothingMode; 4] = [
        SmoothingMode::OneHot,
        SmoothingMode::Uniform,
        SmoothingMode::Weighted,
        SmoothingMode::Masked,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SmoothingMode::OneHot => "onehot",
            SmoothingMode::Uniform => "uniform",
            SmoothingMode::Weighted => "weighted",
            SmoothingMode::Masked => "masked",
        }
    }
}

impl fmt::Display for SmoothingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SmoothingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "onehot" | "one-hot" => Ok(SmoothingMode::OneHot),
            "uniform" => Ok(SmoothingMode::Uniform),
            "weighted" => Ok(SmoothingMode::Weighted),
            "masked" => Ok(SmoothingMode::Masked),
            other => Err(format!("unknown smoothing mode {other:?}")),
        }
    }
}

/// Share of the smoothing mass per class, as class-sum ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas<S> {
    pub target: S,
    pub common: S,
    pub source: S,
}

impl<S: Scalar> Betas<S> {
    pub fn new(target: S, common: S, source: S) -> Self {
        Betas {
            target,
            common,
            source,
        }
    }

    pub fn equal() -> Self {
        let third = S::one() / S::from_count(3);
        Betas::new(third, third, third)
    }

    pub fn get(&self, cat: Category) -> S {
        match cat {
            Category::SourceOnly => self.source,
            Category::Common => self.common,
            Category::TargetOnly => self.target,
        }
    }

    pub fn validate(&self) -> Result<(), SmoothingError> {
        let zero = S::zero();
        if !(self.target >= zero && self.common >= zero && self.source >= zero) {
            return Err(SmoothingError::InvalidBetas);
        }
        let sum = self.target + self.common + self.source;
        if !((sum - S::one()).abs() <= S::tol(1e-12)) {
            return Err(SmoothingError::InvalidBetas);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec<S> {
    pub alpha: S,
    pub mode: SmoothingMode,
    /// Only read in `Weighted` mode.
    pub betas: Betas<S>,
}

impl<S: Scalar> SmoothingSpec<S> {
    pub fn one_hot() -> Self {
        SmoothingSpec {
            alpha: S::zero(),
            mode: SmoothingMode::OneHot,
            betas: Betas::equal(),
        }
    }

    pub fn uniform(alpha: S) -> Self {
        SmoothingSpec {
            alpha,
            mode: SmoothingMode::Uniform,
            betas: Betas::equal(),
        }
    }

    pub fn weighted(alpha: S, betas: Betas<S>) -> Self {
        SmoothingSpec {
            alpha,
            mode: SmoothingMode::Weighted,
            betas,
        }
    }

    pub fn masked(alpha: S) -> Self {
        SmoothingSpec {
            alpha,
            mode: SmoothingMode::Masked,
            betas: Betas::equal(),
        }
    }

    /// Smoothing mass actually applied; one-hot targets ignore `alpha`.
    pub fn effective_alpha(&self) -> S {
        match self.mode {
            SmoothingMode::OneHot => S::zero(),
            _ => self.alpha,
        }
    }

    pub fn validate(&self) -> Result<(), SmoothingError> {
        if !(self.alpha >= S::zero() && self.alpha < S::one()) {
            return Err(SmoothingError::AlphaOutOfRange);
        }
        self.betas.validate()
    }
}

impl SmoothingSpec<f64> {
    /// Short identifier used in file names and report rows.
    pub fn label(&self) -> String {
        let short = |v: f64| {
            let s = format!("{v:.3}");
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s.is_empty() { "0".to_owned() } else { s.to_owned() }
        };
        match self.mode {
            SmoothingMode::OneHot => "onehot".to_owned(),
            SmoothingMode::Uniform => format!("uniform-a{}", short(self.alpha)),
            SmoothingMode::Masked => format!("masked-a{}", short(self.alpha)),
            SmoothingMode::Weighted => format!(
                "weighted-a{}-b{}_{}_{}",
                short(self.alpha),
                short(self.betas.target),
                short(self.betas.common),
                short(self.betas.source)
            ),
        }
    }

    /// The same spec in another scalar type.
    pub fn cast<T: Scalar>(&self) -> SmoothingSpec<T> {
        SmoothingSpec {
            alpha: T::tol(self.alpha),
            mode: self.mode,
            betas: Betas::new(
                T::tol(self.betas.target),
                T::tol(self.betas.common),
                T::tol(self.betas.source),
            ),
        }
    }
}

/// Dense target distribution for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution<S> {
    pub probs: Vec<S>,
    pub correct_id: usize,
    pub spec: SmoothingSpec<S>,
}

impl<S: Scalar> LabelDistribution<S> {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn alpha(&self) -> S {
        self.spec.effective_alpha()
    }

    /// Total probability on tokens of one category, in id order.
    pub fn class_mass(&self, partition: &CategoryPartition, cat: Category) -> S {
        partition
            .ids_in(cat)
            .fold(S::zero(), |acc, id| acc + self.probs[id])
    }
}

impl<S: Real> LabelDistribution<S> {
    /// Shannon entropy in nats; zero entries contribute nothing.
    pub fn entropy(&self) -> S {
        let mut h = S::zero();
        for &p in &self.probs {
            if p > S::zero() {
                h -= p * p.ln();
            }
        }
        h
    }

    /// Debug record with 17 significant digits per value; parses back with
    /// [`LabelDistribution::parse_dump`].
    pub fn to_dump(&self) -> String {
        let f = |x: S| format!("{:.16e}", x.to_f64().unwrap_or(f64::NAN));
        let b = &self.spec.betas;
        let mut out = String::new();
        out.push_str(&format!("k = {}\n", self.probs.len()));
        out.push_str(&format!("alpha = {}\n", f(self.spec.alpha)));
        out.push_str(&format!("mode = \"{}\"\n", self.spec.mode));
        out.push_str(&format!(
            "betas = [{}, {}, {}]\n",
            f(b.target),
            f(b.common),
            f(b.source)
        ));
        out.push_str(&format!("correct_id = {}\n", self.correct_id));
        out.push_str("probs = [\n");
        for &p in &self.probs {
            out.push_str("    ");
            out.push_str(&f(p));
            out.push_str(",\n");
        }
        out.push_str("]\n");
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpRecord {
    k: usize,
    alpha: f64,
    mode: SmoothingMode,
    betas: [f64; 3],
    correct_id: usize,
    probs: Vec<f64>,
}

impl LabelDistribution<f64> {
    pub fn parse_dump(text: &str) -> Result<Self, SmoothingError> {
        let rec: DumpRecord =
            toml::from_str(text).map_err(|e| SmoothingError::MalformedDump(e.to_string()))?;
        if rec.probs.len() != rec.k {
            return Err(SmoothingError::MalformedDump(format!(
                "k = {} but {} probabilities",
                rec.k,
                rec.probs.len()
            )));
        }
        Ok(LabelDistribution {
            probs: rec.probs,
            correct_id: rec.correct_id,
            spec: SmoothingSpec {
                alpha: rec.alpha,
                mode: rec.mode,
                betas: Betas::new(rec.betas[0], rec.betas[1], rec.betas[2]),
            },
        })
    }
}

/// Precomputed per-token smoothing shares for one partition and spec.
///
/// Building a position's target is then a copy plus one addition. Counts
/// how often the gold token fell outside the smoothing pool (e.g. a
/// source-only gold token under masked smoothing).
#[derive(Debug)]
pub struct TargetBuilder<S> {
    spec: SmoothingSpec<S>,
    shares: Vec<S>,
    excluded: Vec<bool>,
    outside_pool: AtomicUsize,
}

impl<S: Scalar> TargetBuilder<S> {
    pub fn new(
        partition: &CategoryPartition,
        spec: SmoothingSpec<S>,
    ) -> Result<Self, SmoothingError> {
        spec.validate()?;
        let k = partition.len();
        let alpha = spec.effective_alpha();
        let excluded: Vec<bool> = (0..k).map(|id| partition.is_excluded(id)).collect();
        let active = partition.active_counts();
        let mut shares = vec![S::zero(); k];
        match spec.mode {
            SmoothingMode::OneHot => {}
            SmoothingMode::Uniform => {
                let n = active.total();
                if n == 0 {
                    return Err(SmoothingError::NoLegalTargets);
                }
                let share = alpha / S::from_count(n);
                for (id, s) in shares.iter_mut().enumerate() {
                    if !excluded[id] {
                        *s = share;
                    }
                }
            }
            SmoothingMode::Weighted => {
                let mut class_share = [S::zero(); 3];
                for (slot, cat) in class_share.iter_mut().zip(Category::ALL) {
                    let beta = spec.betas.get(cat);
                    let n = active.get(cat);
                    if beta > S::zero() {
                        if n == 0 {
                            return Err(SmoothingError::EmptyClassWithMass(cat));
                        }
                        *slot = alpha * beta / S::from_count(n);
                    }
                }
                for (id, s) in shares.iter_mut().enumerate() {
                    if !excluded[id] {
                        *s = class_share[partition.category(id) as usize];
                    }
                }
            }
            SmoothingMode::Masked => {
                let n = active.target + active.common;
                if n == 0 {
                    return Err(SmoothingError::NoLegalTargets);
                }
                let share = alpha / S::from_count(n);
                for (id, s) in shares.iter_mut().enumerate() {
                    if !excluded[id] && partition.category(id) != Category::SourceOnly {
                        *s = share;
                    }
                }
            }
        }
        Ok(TargetBuilder {
            spec,
            shares,
            excluded,
            outside_pool: AtomicUsize::new(0),
        })
    }

    pub fn spec(&self) -> &SmoothingSpec<S> {
        &self.spec
    }

    /// Smoothing mass each token receives before the gold share is added.
    pub fn shares(&self) -> &[S] {
        &self.shares
    }

    pub fn build(&self, correct_id: usize) -> Result<LabelDistribution<S>, SmoothingError> {
        let k = self.shares.len();
        if correct_id >= k {
            return Err(SmoothingError::IndexOutOfRange { id: correct_id, k });
        }
        if self.excluded[correct_id] {
            return Err(SmoothingError::CorrectTokenExcluded(correct_id));
        }
        let alpha = self.spec.effective_alpha();
        if alpha > S::zero() && self.shares[correct_id] == S::zero() {
            self.outside_pool.fetch_add(1, Ordering::Relaxed);
        }
        let mut probs = self.shares.clone();
        probs[correct_id] = (S::one() - alpha) + probs[correct_id];
        Ok(LabelDistribution {
            probs,
            correct_id,
            spec: self.spec,
        })
    }

    /// Number of built targets whose gold token received no smoothing share.
    pub fn correct_outside_pool(&self) -> usize {
        self.outside_pool.load(Ordering::Relaxed)
    }
}

pub fn one_hot<S: Scalar>(k: usize, correct_id: usize) -> Result<LabelDistribution<S>, SmoothingError> {
    if correct_id >= k {
        return Err(SmoothingError::IndexOutOfRange { id: correct_id, k });
    }
    let mut probs = vec![S::zero(); k];
    probs[correct_id] = S::one();
    Ok(LabelDistribution {
        probs,
        correct_id,
        spec: SmoothingSpec::one_hot(),
    })
}

/// Classic label smoothing over all `k` classes.
pub fn smooth_uniform<S: Scalar>(
    k: usize,
    correct_id: usize,
    alpha: S,
) -> Result<LabelDistribution<S>, SmoothingError> {
    if correct_id >= k {
        return Err(SmoothingError::IndexOutOfRange { id: correct_id, k });
    }
    let spec = SmoothingSpec::uniform(alpha);
    if !(alpha >= S::zero() && alpha < S::one()) {
        return Err(SmoothingError::AlphaOutOfRange);
    }
    let share = alpha / S::from_count(k);
    let mut probs = vec![share; k];
    probs[correct_id] = (S::one() - alpha) + share;
    Ok(LabelDistribution {
        probs,
        correct_id,
        spec,
    })
}

pub fn smooth_weighted<S: Scalar>(
    partition: &CategoryPartition,
    correct_id: usize,
    alpha: S,
    betas: Betas<S>,
) -> Result<LabelDistribution<S>, SmoothingError> {
    TargetBuilder::new(partition, SmoothingSpec::weighted(alpha, betas))?.build(correct_id)
}

pub fn smooth_masked<S: Scalar>(
    partition: &CategoryPartition,
    correct_id: usize,
    alpha: S,
) -> Result<LabelDistribution<S>, SmoothingError> {
    TargetBuilder::new(partition, SmoothingSpec::masked(alpha))?.build(correct_id)
}

/// Weighted-smoothing betas that reproduce masked smoothing exactly:
/// `(|T|/|T∪C|, |C|/|T∪C|, 0)` over non-excluded tokens.
pub fn mls_as_wls_betas<S: Scalar>(partition: &CategoryPartition) -> Result<Betas<S>, SmoothingError> {
    let active = partition.active_counts();
    let pool = active.target + active.common;
    if pool == 0 {
        return Err(SmoothingError::NoLegalTargets);
    }
    let n = S::from_count(pool);
    Ok(Betas::new(
        S::from_count(active.target) / n,
        S::from_count(active.common) / n,
        S::zero(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation<S> {
    Empty,
    CorrectOutOfRange { id: usize, k: usize },
    Negative { id: usize, value: S },
    SumNotOne { sum: S },
    CorrectBelowFloor { value: S, floor: S },
}

/// Lists every broken distribution invariant; empty means valid.
pub fn validate<S: Scalar>(d: &LabelDistribution<S>) -> Vec<Violation<S>> {
    let mut out = Vec::new();
    if d.probs.is_empty() {
        out.push(Violation::Empty);
        return out;
    }
    let mut sum = S::zero();
    for (id, &p) in d.probs.iter().enumerate() {
        if !(p >= S::zero()) {
            out.push(Violation::Negative { id, value: p });
        }
        sum = sum + p;
    }
    if !((sum - S::one()).abs() <= S::tol(1e-9)) {
        out.push(Violation::SumNotOne { sum });
    }
    match d.probs.get(d.correct_id) {
        None => out.push(Violation::CorrectOutOfRange {
            id: d.correct_id,
            k: d.probs.len(),
        }),
        Some(&value) => {
            let floor = S::one() - d.alpha();
            if !(value >= floor) {
                out.push(Violation::CorrectBelowFloor { value, floor });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{partition, SpecialTokens, Vocabulary};
    use crate::Exact;

    /// Ten-token example: gold y' and t1..t3 target-only, c1..c3 common,
    /// s1..s3 source-only.
    pub(crate) fn ten_token_partition() -> CategoryPartition {
        let joint = Vocabulary::new([
            "y", "t1", "t2", "t3", "c1", "c2", "c3", "s1", "s2", "s3",
        ])
        .unwrap();
        let src = Vocabulary::new(["c1", "c2", "c3", "s1", "s2", "s3"]).unwrap();
        let tgt = Vocabulary::new(["y", "t1", "t2", "t3", "c1", "c2", "c3"]).unwrap();
        partition(&joint, &src, &tgt, &SpecialTokens::none()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn one_hot_basic() {
        let d = one_hot::<f64>(4, 2).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot::<f64>(1, 0).unwrap().probs, vec![1.0]);
        assert_eq!(
            one_hot::<f64>(3, 3).unwrap_err(),
            SmoothingError::IndexOutOfRange { id: 3, k: 3 }
        );
    }

    #[test]
    fn uniform_substitution() {
        let d = smooth_uniform(10, 0, 0.1f64).unwrap();
        assert!(close(d.probs[0], 0.91, 1e-15));
        for &p in &d.probs[1..] {
            assert!(close(p, 0.01, 1e-15));
        }
        assert_eq!(smooth_uniform(5, 1, 0.0f64).unwrap().probs, one_hot::<f64>(5, 1).unwrap().probs);
        assert_eq!(
            smooth_uniform(5, 1, 1.0f64).unwrap_err(),
            SmoothingError::AlphaOutOfRange
        );
        assert_eq!(
            smooth_uniform(5, 1, -0.1f64).unwrap_err(),
            SmoothingError::AlphaOutOfRange
        );
    }

    #[test]
    fn uniform_exact_k7() {
        let alpha = Exact::new(3, 10);
        let d = smooth_uniform(7, 3, alpha).unwrap();
        for (i, &p) in d.probs.iter().enumerate() {
            let expected = if i == 3 {
                Exact::new(7, 10) + Exact::new(3, 70)
            } else {
                Exact::new(3, 70)
            };
            assert_eq!(p, expected);
        }
    }

    #[test]
    fn weighted_ten_token_exact() {
        let p = ten_token_partition();
        let third = Exact::new(1, 3);
        let d = smooth_weighted(&p, 0, Exact::new(1, 10), Betas::new(third, third, third)).unwrap();
        // alpha/3 spread over 4 target, 3 common, 3 source tokens.
        assert_eq!(d.probs[0], Exact::new(9, 10) + Exact::new(1, 120));
        assert_eq!(d.probs[0], Exact::new(109, 120));
        for id in 1..4 {
            assert_eq!(d.probs[id], Exact::new(1, 120));
        }
        for id in 4..10 {
            assert_eq!(d.probs[id], Exact::new(1, 90));
        }
        assert_eq!(d.probs.iter().copied().sum::<Exact>(), Exact::from_integer(1));
    }

    #[test]
    fn weighted_empty_class_with_mass() {
        let joint = Vocabulary::new(["c", "t"]).unwrap();
        let p = partition(
            &joint,
            &Vocabulary::new(["c"]).unwrap(),
            &Vocabulary::new(["c", "t"]).unwrap(),
            &SpecialTokens::none(),
        )
        .unwrap();
        let err = smooth_weighted(&p, 1, 0.1, Betas::new(0.5, 0.25, 0.25)).unwrap_err();
        assert_eq!(err, SmoothingError::EmptyClassWithMass(Category::SourceOnly));
        // Zero beta on the empty class is fine.
        smooth_weighted(&p, 1, 0.1, Betas::new(0.5, 0.5, 0.0)).unwrap();
    }

    #[test]
    fn weighted_invalid_betas() {
        let p = ten_token_partition();
        assert_eq!(
            smooth_weighted(&p, 0, 0.1, Betas::new(0.5, 0.5, 0.5)).unwrap_err(),
            SmoothingError::InvalidBetas
        );
        assert_eq!(
            smooth_weighted(&p, 0, 0.1, Betas::new(1.5, -0.5, 0.0)).unwrap_err(),
            SmoothingError::InvalidBetas
        );
    }

    #[test]
    fn masked_ten_token_exact() {
        let p = ten_token_partition();
        let d = smooth_masked(&p, 0, Exact::new(1, 10)).unwrap();
        assert_eq!(d.probs[0], Exact::new(9, 10) + Exact::new(1, 70));
        for id in 1..7 {
            assert_eq!(d.probs[id], Exact::new(1, 70));
        }
        for id in 7..10 {
            assert_eq!(d.probs[id], Exact::from_integer(0));
        }
    }

    #[test]
    fn masked_alpha_zero_is_one_hot() {
        let p = ten_token_partition();
        for id in 0..10 {
            let d = smooth_masked(&p, id, 0.0f64).unwrap();
            assert_eq!(d.probs, one_hot::<f64>(10, id).unwrap().probs);
        }
    }

    #[test]
    fn mls_betas_and_equivalence() {
        let p = ten_token_partition();
        let b: Betas<Exact> = mls_as_wls_betas(&p).unwrap();
        assert_eq!(b, Betas::new(Exact::new(4, 7), Exact::new(3, 7), Exact::from_integer(0)));
        let alpha = Exact::new(1, 10);
        for id in 0..10 {
            let m = smooth_masked(&p, id, alpha).unwrap();
            let w = smooth_weighted(&p, id, alpha, b).unwrap();
            assert_eq!(m.probs, w.probs);
            let half = Exact::new(1, 2);
            let naive = smooth_weighted(&p, id, alpha, Betas::new(half, half, Exact::from_integer(0))).unwrap();
            assert_ne!(m.probs, naive.probs);
        }
    }

    #[test]
    fn mls_betas_without_common() {
        let joint = Vocabulary::new(["s", "t"]).unwrap();
        let p = partition(
            &joint,
            &Vocabulary::new(["s"]).unwrap(),
            &Vocabulary::new(["t"]).unwrap(),
            &SpecialTokens::none(),
        )
        .unwrap();
        let b: Betas<f64> = mls_as_wls_betas(&p).unwrap();
        assert_eq!((b.target, b.common, b.source), (1.0, 0.0, 0.0));
    }

    #[test]
    fn source_gold_under_masked_is_counted() {
        let p = ten_token_partition();
        let builder = TargetBuilder::new(&p, SmoothingSpec::masked(0.1f64)).unwrap();
        let d = builder.build(8).unwrap();
        assert_eq!(d.probs[8], 0.9);
        assert!(validate(&d).is_empty());
        assert_eq!(builder.correct_outside_pool(), 1);
        builder.build(0).unwrap();
        assert_eq!(builder.correct_outside_pool(), 1);
    }

    #[test]
    fn padding_never_receives_mass() {
        let joint = Vocabulary::new(["<pad>", "<eos>", "s", "c", "t"]).unwrap();
        let p = partition(
            &joint,
            &Vocabulary::new(["s", "c"]).unwrap(),
            &Vocabulary::new(["c", "t"]).unwrap(),
            &SpecialTokens::standard(),
        )
        .unwrap();
        for spec in [
            SmoothingSpec::uniform(0.2f64),
            SmoothingSpec::weighted(0.2, Betas::equal()),
            SmoothingSpec::masked(0.2),
        ] {
            let b = TargetBuilder::new(&p, spec).unwrap();
            let d = b.build(4).unwrap();
            assert_eq!(d.probs[0], 0.0);
            assert!(validate(&d).is_empty(), "{spec:?}");
            assert_eq!(
                b.build(0).unwrap_err(),
                SmoothingError::CorrectTokenExcluded(0)
            );
        }
        // Uniform over the 4 non-pad tokens.
        let d = TargetBuilder::new(&p, SmoothingSpec::uniform(0.2f64))
            .unwrap()
            .build(4)
            .unwrap();
        assert!(close(d.probs[1], 0.05, 1e-15));
    }

    #[test]
    fn validate_flags_scaled_vector() {
        let mut d = smooth_uniform(10, 0, 0.1f64).unwrap();
        for p in &mut d.probs {
            *p *= 1.01;
        }
        let v = validate(&d);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::SumNotOne { .. }));
    }

    #[test]
    fn validate_flags_negative_and_floor() {
        let d = LabelDistribution {
            probs: vec![0.5, 0.7, -0.2],
            correct_id: 0,
            spec: SmoothingSpec::uniform(0.1),
        };
        let v = validate(&d);
        assert!(v.contains(&Violation::Negative { id: 2, value: -0.2 }));
        assert!(v.iter().any(|x| matches!(x, Violation::CorrectBelowFloor { .. })));
    }

    #[test]
    fn dump_round_trip() {
        let p = ten_token_partition();
        let d = smooth_masked(&p, 0, 0.1f64).unwrap();
        let text = d.to_dump();
        assert!(text.contains("mode = \"masked\""));
        let back = LabelDistribution::parse_dump(&text).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn dump_rejects_length_mismatch() {
        let text = "k = 2\nalpha = 0.0\nmode = \"onehot\"\nbetas = [0.5, 0.5, 0.0]\ncorrect_id = 0\nprobs = [1.0]\n";
        assert!(matches!(
            LabelDistribution::parse_dump(text),
            Err(SmoothingError::MalformedDump(_))
        ));
    }
}
