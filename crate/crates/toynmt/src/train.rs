//! Deterministic teacher-forced training with Adam and an inverse square
//! root learning-rate schedule.

use mlsmooth_core::loss::{cross_entropy, LossError};
use mlsmooth_core::{Category, CategoryPartition, SmoothingMode, SmoothingSpec, TargetBuilder};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EncodedPair, ParallelCorpus, Split};
use crate::dropout::DropoutStream;
use crate::eval::{for_each_teacher_forced_step, teacher_forced_nll, EvalError};
use crate::kernel::ModelScalar;
use crate::matrix::Matrix;
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("loss became non-finite at step {0}")]
    DivergedLoss(usize),
    #[error("masked target for gold id {0} put mass on a source-only token")]
    MaskViolation(usize),
    #[error("smoothing spec rejected for this corpus: {0}")]
    Smoothing(#[from] mlsmooth_core::smoothing::SmoothingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl TrainError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, TrainError::DivergedLoss(_))
    }

    /// Non-finite logits mean the parameters blew up; report that as
    /// divergence at `step`.
    fn at_step(self, step: usize) -> Self {
        let non_finite = |m: &ModelError| matches!(m, ModelError::Loss(LossError::NonFiniteInput));
        match &self {
            TrainError::Model(m) if non_finite(m) => TrainError::DivergedLoss(step),
            TrainError::Eval(EvalError::Model(m)) if non_finite(m) => TrainError::DivergedLoss(step),
            TrainError::Eval(EvalError::Loss(LossError::NonFiniteInput)) => TrainError::DivergedLoss(step),
            _ => self,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Upper bound on target tokens (including end-of-sentence) per batch.
    pub batch_tokens: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    /// Size of the fixed training subset scored at every checkpoint.
    pub train_eval_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 3e-3,
            warmup_steps: 200,
            batch_tokens: 256,
            max_steps: 800,
            eval_interval: 50,
            seed: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            weight_decay: 1e-4,
            train_eval_pairs: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.warmup_steps > self.max_steps {
            return bad("warmup_steps exceeds max_steps");
        }
        if self.eval_interval == 0 || self.batch_tokens == 0 || self.train_eval_pairs == 0 {
            return bad("eval_interval, batch_tokens and train_eval_pairs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    /// Learning rate for 1-based `step`: linear warmup, then decay with the
    /// inverse square root of the step.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        if self.warmup_steps == 0 {
            return self.peak_lr;
        }
        let w = self.warmup_steps as f64;
        self.peak_lr * (s / w).min((w / s).sqrt())
    }
}

/// Curves sampled at step 0 and every `eval_interval` steps (and at the last
/// step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub spec: SmoothingSpec<f64>,
    pub seed: u64,
    pub steps: Vec<usize>,
    /// Mean soft cross-entropy against the smoothed targets, train subset.
    pub train_soft_ce: Vec<f64>,
    /// Gold-token perplexity, train subset.
    pub train_ppl: Vec<f64>,
    pub dev_ppl: Vec<f64>,
    /// Mean soft cross-entropy of each optimizer step's batch.
    pub batch_loss: Vec<f64>,
    pub targets_built: usize,
    /// Largest total source-only mass of any target built during training.
    pub max_target_source_mass: f64,
}

struct Adam<S> {
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
    t: i32,
}

impl<S: ModelScalar> Adam<S> {
    fn step(&mut self, params: &mut [Matrix<S>], grads: &[Matrix<S>], lr: f64, tc: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (S::tol(tc.adam_beta1), S::tol(tc.adam_beta2));
        let (one, eps, wd) = (S::one(), S::tol(tc.adam_eps), S::tol(tc.weight_decay));
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let lr = S::tol(lr);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(&mut m.data)
                .zip(&mut v.data)
            {
                let g = g + wd * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Consecutive runs of a shuffled order whose target tokens fit in the
/// budget; a single over-long pair still forms its own batch.
fn make_batches(order: &[usize], pairs: &[EncodedPair], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        let n = pairs[i].tgt.len() + 1;
        if !current.is_empty() && used + n > budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

struct Checkpoint {
    soft_ce: f64,
    train_ppl: f64,
    dev_ppl: f64,
}

fn checkpoint<S: ModelScalar>(
    model: &Model<S>,
    spec: &SmoothingSpec<f64>,
    partition: &CategoryPartition,
    subset: &[EncodedPair],
    dev: &[EncodedPair],
    corpus: &ParallelCorpus,
) -> Result<Checkpoint, TrainError> {
    let specials = corpus.special_ids();
    let builder = TargetBuilder::<f64>::new(partition, *spec)?;
    let mut soft = 0.0;
    let mut nll = 0.0;
    let mut n = 0usize;
    for_each_teacher_forced_step(model, subset, specials, 64, |_, _, gold, z| {
        let target = builder.build(gold).map_err(|e| {
            EvalError::Model(ModelError::Smoothing(e))
        })?;
        let l = cross_entropy(&target, z).map_err(EvalError::Loss)?;
        soft += l.soft_ce;
        nll += l.gold_nll;
        n += 1;
        Ok(())
    })?;
    let dev_ppl = if dev.is_empty() {
        f64::NAN
    } else {
        teacher_forced_nll(model, dev, specials, 64)?.mean_gold_nll.exp()
    };
    Ok(Checkpoint {
        soft_ce: soft / n as f64,
        train_ppl: (nll / n as f64).exp(),
        dev_ppl,
    })
}

/// Trains `model` in place on the corpus's training split.
pub fn train<S: ModelScalar>(
    model: &mut Model<S>,
    corpus: &ParallelCorpus,
    spec: &SmoothingSpec<f64>,
    tc: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    tc.validate()?;
    let pairs = corpus.encode(Split::Train);
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let dev = corpus.encode(Split::Dev);
    let subset = &pairs[..tc.train_eval_pairs.min(pairs.len())];
    let partition = &corpus.partition;
    let specials = corpus.special_ids();
    let builder = TargetBuilder::<S>::new(partition, spec.cast())?;
    let source_ids: Vec<usize> = partition.ids_in(Category::SourceOnly).collect();
    let masked = spec.mode == SmoothingMode::Masked;

    let mut report = TrainReport {
        spec: *spec,
        seed: tc.seed,
        steps: Vec::new(),
        train_soft_ce: Vec::new(),
        train_ppl: Vec::new(),
        dev_ppl: Vec::new(),
        batch_loss: Vec::with_capacity(tc.max_steps),
        targets_built: 0,
        max_target_source_mass: 0.0,
    };
    let record = |model: &Model<S>, step: usize, report: &mut TrainReport| -> Result<(), TrainError> {
        let c = checkpoint(model, spec, partition, subset, &dev, corpus).map_err(|e| e.at_step(step))?;
        if !c.soft_ce.is_finite() || !c.train_ppl.is_finite() {
            return Err(TrainError::DivergedLoss(step));
        }
        report.steps.push(step);
        report.train_soft_ce.push(c.soft_ce);
        report.train_ppl.push(c.train_ppl);
        report.dev_ppl.push(c.dev_ppl);
        Ok(())
    };
    record(model, 0, &mut report)?;

    let mut adam = Adam {
        m: model.params().zeros_like(),
        v: model.params().zeros_like(),
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    for step in 1..=tc.max_steps {
        if queue.is_empty() {
            order.shuffle(&mut rng);
            queue = make_batches(&order, &pairs, tc.batch_tokens);
            queue.reverse();
        }
        let batch_ids = queue.pop().expect("refilled above");
        let batch: Vec<&EncodedPair> = batch_ids.iter().map(|&i| &pairs[i]).collect();
        let dropout = (model.config().dropout > 0.0).then(|| DropoutStream::new(tc.seed, step as u64));
        let mut violation = None;
        let out = model.loss_and_grads(&batch, specials, &builder, dropout, |t| {
            report.targets_built += 1;
            let mass: f64 = source_ids
                .iter()
                .map(|&i| t.probs[i].to_f64().unwrap_or(f64::NAN))
                .sum();
            if mass > report.max_target_source_mass {
                report.max_target_source_mass = mass;
            }
            if masked && mass != 0.0 && violation.is_none() {
                violation = Some(t.correct_id);
            }
        })
        .map_err(|e| TrainError::from(e).at_step(step))?;
        if let Some(id) = violation {
            return Err(TrainError::MaskViolation(id));
        }
        let loss = out.soft_ce_sum.to_f64().unwrap_or(f64::NAN) / out.tokens as f64;
        if !loss.is_finite() {
            return Err(TrainError::DivergedLoss(step));
        }
        report.batch_loss.push(loss);
        adam.step(model.params_mut().tensors_mut(), &out.grads, tc.learning_rate(step), tc);
        if step % tc.eval_interval == 0 || step == tc.max_steps {
            record(model, step, &mut report)?;
        }
    }
    Ok(report)
}
