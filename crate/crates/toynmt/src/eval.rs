//! Perplexity, calibration, translation quality and source-mass
//! diagnostics for a trained scorer.

use mlsmooth_core::loss::{log_softmax, LossError};
use mlsmooth_core::metrics::{bleu, chrf, ece, MetricsError, PredictionSample};
use mlsmooth_core::{Category, CategoryPartition, Vocabulary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EncodedPair, SpecialIds};
use crate::decode::{argmax, greedy_decode};
use crate::model::{ModelError, SequenceScorer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub ece_bins: usize,
    /// Decoding stops after `source length + decode_extra` tokens.
    pub decode_extra: usize,
    /// Sentences per forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ece_bins: 10,
            decode_extra: 5,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub sentences: usize,
    pub tokens: usize,
    pub ppl: f64,
    pub ece_teacher_forced: f64,
    pub ece_inference: f64,
    pub bleu: f64,
    pub chrf: f64,
    /// Mean predicted probability on source-only tokens per gold-prefix step.
    pub mean_source_mass: f64,
    pub max_prob_sum_error: f64,
}

impl EvalMetrics {
    pub const NAMES: [&'static str; 6] = [
        "ppl",
        "ece_teacher_forced",
        "ece_inference",
        "bleu",
        "chrf",
        "mean_source_mass",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "ppl" => self.ppl,
            "ece_teacher_forced" => self.ece_teacher_forced,
            "ece_inference" => self.ece_inference,
            "bleu" => self.bleu,
            "chrf" => self.chrf,
            "mean_source_mass" => self.mean_source_mass,
            _ => return None,
        })
    }
}

/// Gold-prefix statistics, shared with the trainer's checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherForced {
    pub tokens: usize,
    pub mean_gold_nll: f64,
}

/// Runs `visit(pair_index, position, gold, logits)` over every gold-prefix
/// step, in batches.
pub fn for_each_teacher_forced_step<M, F>(
    model: &M,
    pairs: &[EncodedPair],
    specials: SpecialIds,
    batch_size: usize,
    mut visit: F,
) -> Result<(), EvalError>
where
    M: SequenceScorer + ?Sized,
    F: FnMut(usize, usize, usize, &[f64]) -> Result<(), EvalError>,
{
    for (chunk_idx, chunk) in pairs.chunks(batch_size.max(1)).enumerate() {
        let src: Vec<&[usize]> = chunk.iter().map(|p| p.src.as_slice()).collect();
        let tgt_in: Vec<Vec<usize>> = chunk
            .iter()
            .map(|p| std::iter::once(specials.bos).chain(p.tgt.iter().copied()).collect())
            .collect();
        let tgt_refs: Vec<&[usize]> = tgt_in.iter().map(Vec::as_slice).collect();
        let scores = model.score(&src, &tgt_refs)?;
        for (b, (p, rows)) in chunk.iter().zip(scores).enumerate() {
            for (t, z) in rows.iter().enumerate() {
                let gold = p.tgt.get(t).copied().unwrap_or(specials.eos);
                visit(chunk_idx * batch_size.max(1) + b, t, gold, z)?;
            }
        }
    }
    Ok(())
}

pub fn teacher_forced_nll<M: SequenceScorer + ?Sized>(
    model: &M,
    pairs: &[EncodedPair],
    specials: SpecialIds,
    batch_size: usize,
) -> Result<TeacherForced, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut nll = 0.0;
    let mut tokens = 0;
    for_each_teacher_forced_step(model, pairs, specials, batch_size, |_, _, gold, z| {
        nll -= log_softmax(z)?[gold];
        tokens += 1;
        Ok(())
    })?;
    Ok(TeacherForced {
        tokens,
        mean_gold_nll: nll / tokens as f64,
    })
}

pub fn evaluate<M: SequenceScorer + ?Sized>(
    model: &M,
    pairs: &[EncodedPair],
    partition: &CategoryPartition,
    opts: &EvalOptions,
) -> Result<EvalMetrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let joint = partition.joint();
    let specials = SpecialIds::lookup(joint).ok_or(EvalError::EmptyCorpus)?;
    let source_ids: Vec<usize> = partition.ids_in(Category::SourceOnly).collect();

    let mut nll = 0.0;
    let mut tokens = 0usize;
    let mut source_mass = 0.0;
    let mut tf_samples = Vec::new();
    let mut max_err: f64 = 0.0;
    for_each_teacher_forced_step(model, pairs, specials, opts.batch_size, |_, _, gold, z| {
        let logp = log_softmax(z)?;
        let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        let sum: f64 = probs.iter().sum();
        max_err = max_err.max((sum - 1.0).abs());
        nll -= logp[gold];
        tokens += 1;
        source_mass += source_ids.iter().map(|&i| probs[i]).sum::<f64>();
        let pred = argmax(&probs);
        tf_samples.push(PredictionSample::new(probs[pred].min(1.0), pred == gold));
        Ok(())
    })?;

    let mut hyps: Vec<Vec<usize>> = Vec::with_capacity(pairs.len());
    let mut inf_samples = Vec::new();
    for chunk in pairs.chunks(opts.batch_size.max(1)) {
        // Decode each length group together so the step limit is per sentence.
        let mut order: Vec<usize> = (0..chunk.len()).collect();
        order.sort_by_key(|&i| chunk[i].src.len());
        let mut decoded = vec![None; chunk.len()];
        for group in order.chunk_by(|&a, &b| chunk[a].src.len() == chunk[b].src.len()) {
            let srcs: Vec<&[usize]> = group.iter().map(|&i| chunk[i].src.as_slice()).collect();
            let max_len = srcs[0].len() + opts.decode_extra;
            let out = greedy_decode(model, &srcs, specials.bos, specials.eos, max_len)?;
            for (&i, d) in group.iter().zip(out) {
                decoded[i] = Some(d);
            }
        }
        for (p, d) in chunk.iter().zip(decoded) {
            let d = d.expect("every sentence decoded");
            for (t, step) in d.steps.iter().enumerate() {
                let reference = p.tgt.get(t).copied().unwrap_or(specials.eos);
                let correct = t <= p.tgt.len() && step.token == reference;
                inf_samples.push(PredictionSample::new(step.confidence.min(1.0), correct));
                max_err = max_err.max(step.prob_sum_error);
            }
            hyps.push(d.tokens);
        }
    }

    let refs: Vec<&[usize]> = pairs.iter().map(|p| p.tgt.as_slice()).collect();
    let hyp_text: Vec<String> = hyps.iter().map(|h| detokenize(joint, h)).collect();
    let ref_text: Vec<String> = refs.iter().map(|r| detokenize(joint, r)).collect();
    let ece_inference = if inf_samples.is_empty() {
        0.0
    } else {
        ece(&inf_samples, opts.ece_bins)?.ece
    };
    Ok(EvalMetrics {
        sentences: pairs.len(),
        tokens,
        ppl: (nll / tokens as f64).exp(),
        ece_teacher_forced: ece(&tf_samples, opts.ece_bins)?.ece,
        ece_inference,
        bleu: bleu(&hyps, &refs, 4)?,
        chrf: chrf(&hyp_text, &ref_text, 6, 2.0)?,
        mean_source_mass: source_mass / tokens as f64,
        max_prob_sum_error: max_err,
    })
}

/// Ids to a whitespace-joined sentence.
pub fn detokenize(joint: &Vocabulary, ids: &[usize]) -> String {
    ids.iter()
        .map(|&i| joint.token(i).unwrap_or(""))
        .collect::<Vec<_>>()
        .join(" ")
}
