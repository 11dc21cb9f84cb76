//! Soft-target cross-entropy over logits.
//!
//! All reductions run left to right in input order, so results do not
//! depend on how callers split work.

use thiserror::Error;

use crate::scalar::Real;
use crate::smoothing::LabelDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("logits contain a non-finite value")]
    NonFiniteInput,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("every position is padding")]
    AllPadded,
    #[error("negative mean negative log-likelihood")]
    NegativeInput,
    #[error("empty logit vector")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionLoss<S> {
    /// Cross-entropy against the smoothed target.
    pub soft_ce: S,
    /// Negative log-probability of the gold token.
    pub gold_nll: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLoss<S> {
    pub mean_soft_ce: S,
    pub mean_gold_nll: S,
    pub token_count: usize,
}

fn check_finite<S: Real>(z: &[S]) -> Result<(), LossError> {
    if z.is_empty() {
        return Err(LossError::Empty);
    }
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LossError::NonFiniteInput)
    }
}

/// `max(z) + ln Σ exp(z - max(z))`.
pub fn log_sum_exp<S: Real>(z: &[S]) -> Result<S, LossError> {
    check_finite(z)?;
    let m = z.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for &v in z {
        sum += (v - m).exp();
    }
    Ok(m + sum.ln())
}

pub fn softmax<S: Real>(z: &[S]) -> Result<Vec<S>, LossError> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out)?;
    Ok(out)
}

/// Max-subtracted softmax, overwriting `z`.
pub fn softmax_in_place<S: Real>(z: &mut [S]) -> Result<(), LossError> {
    check_finite(z)?;
    let m = z.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

pub fn log_softmax<S: Real>(z: &[S]) -> Result<Vec<S>, LossError> {
    let lse = log_sum_exp(z)?;
    Ok(z.iter().map(|&v| v - lse).collect())
}

fn check_len<S>(target: &LabelDistribution<S>, z_len: usize) -> Result<(), LossError> {
    if target.probs.len() != z_len {
        return Err(LossError::LengthMismatch {
            expected: target.probs.len(),
            got: z_len,
        });
    }
    Ok(())
}

/// Cross-entropy of `target` against `softmax(z)`. Zero-probability target
/// entries contribute exactly zero.
pub fn cross_entropy<S: Real>(
    target: &LabelDistribution<S>,
    z: &[S],
) -> Result<PositionLoss<S>, LossError> {
    check_len(target, z.len())?;
    let lse = log_sum_exp(z)?;
    let mut soft_ce = S::zero();
    for (&t, &v) in target.probs.iter().zip(z) {
        if t != S::zero() {
            soft_ce -= t * (v - lse);
        }
    }
    let gold_nll = lse - z[target.correct_id];
    Ok(PositionLoss { soft_ce, gold_nll })
}

/// `softmax(z) - target`.
pub fn grad_logits<S: Real>(target: &LabelDistribution<S>, z: &[S]) -> Result<Vec<S>, LossError> {
    check_len(target, z.len())?;
    let mut g = softmax(z)?;
    for (gi, &t) in g.iter_mut().zip(&target.probs) {
        *gi -= t;
    }
    Ok(g)
}

/// Loss and gradient in one pass; the gradient is written into `grad`
/// scaled by `scale`.
pub fn cross_entropy_with_grad<S: Real>(
    target: &LabelDistribution<S>,
    z: &[S],
    scale: S,
    grad: &mut [S],
) -> Result<PositionLoss<S>, LossError> {
    check_len(target, z.len())?;
    if grad.len() != z.len() {
        return Err(LossError::LengthMismatch {
            expected: z.len(),
            got: grad.len(),
        });
    }
    let loss = cross_entropy(target, z)?;
    grad.copy_from_slice(z);
    softmax_in_place(grad)?;
    for (gi, &t) in grad.iter_mut().zip(&target.probs) {
        *gi = (*gi - t) * scale;
    }
    Ok(loss)
}

/// Running sums over non-padding positions, in the order they are added.
#[derive(Debug, Clone, Copy)]
pub struct LossAccumulator<S> {
    soft_ce: S,
    gold_nll: S,
    count: usize,
}

impl<S: Real> Default for LossAccumulator<S> {
    fn default() -> Self {
        LossAccumulator {
            soft_ce: S::zero(),
            gold_nll: S::zero(),
            count: 0,
        }
    }
}

impl<S: Real> LossAccumulator<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, loss: PositionLoss<S>) {
        self.soft_ce += loss.soft_ce;
        self.gold_nll += loss.gold_nll;
        self.count += 1;
    }

    pub fn add(&mut self, target: &LabelDistribution<S>, z: &[S]) -> Result<PositionLoss<S>, LossError> {
        let loss = cross_entropy(target, z)?;
        self.push(loss);
        Ok(loss)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<SequenceLoss<S>, LossError> {
        if self.count == 0 {
            return Err(LossError::AllPadded);
        }
        let n = S::from_count(self.count);
        Ok(SequenceLoss {
            mean_soft_ce: self.soft_ce / n,
            mean_gold_nll: self.gold_nll / n,
            token_count: self.count,
        })
    }
}

/// Mean losses over positions whose `pad_mask` entry is `false`.
pub fn sequence_loss<S, Z>(
    targets: &[LabelDistribution<S>],
    logits: &[Z],
    pad_mask: &[bool],
) -> Result<SequenceLoss<S>, LossError>
where
    S: Real,
    Z: AsRef<[S]>,
{
    if logits.len() != targets.len() {
        return Err(LossError::LengthMismatch {
            expected: targets.len(),
            got: logits.len(),
        });
    }
    if pad_mask.len() != targets.len() {
        return Err(LossError::LengthMismatch {
            expected: targets.len(),
            got: pad_mask.len(),
        });
    }
    let mut acc = LossAccumulator::new();
    for ((t, z), &pad) in targets.iter().zip(logits).zip(pad_mask) {
        if !pad {
            acc.add(t, z.as_ref())?;
        }
    }
    acc.finish()
}

pub fn perplexity<S: Real>(mean_gold_nll: S) -> Result<S, LossError> {
    if !(mean_gold_nll >= S::zero()) {
        return Err(LossError::NegativeInput);
    }
    Ok(mean_gold_nll.exp())
}
