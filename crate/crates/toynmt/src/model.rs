//! Pre-norm transformer encoder-decoder over a joint vocabulary.
//!
//! One embedding table serves both sides and doubles as the output
//! projection. Positions are learned, one table per side.

use std::path::Path;

use mlsmooth_core::loss::cross_entropy_with_grad;
use mlsmooth_core::{LabelDistribution, TargetBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EncodedPair, SpecialIds};
use crate::dropout::DropoutStream;
use crate::kernel::ModelScalar;
use crate::matrix::Matrix;
use crate::tape::{AttnLayout, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {k}")]
    TokenOutOfRange { id: usize, k: usize },
    #[error("{0}")]
    Loss(#[from] mlsmooth_core::loss::LossError),
    #[error("{0}")]
    Smoothing(#[from] mlsmooth_core::smoothing::SmoothingError),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            model_dim: 64,
            heads: 2,
            ffn_dim: 128,
            dropout: 0.1,
            max_positions: 64,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("layers, model_dim, heads and ffn_dim must be at least 1");
        }
        if self.max_positions == 0 {
            return bad("max_positions must be at least 1");
        }
        if self.model_dim % self.heads != 0 {
            return bad("model_dim must be divisible by heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln_attn: Norm,
    attn: Attn,
    ln_ffn: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln_self: Norm,
    self_attn: Attn,
    ln_cross: Norm,
    cross: Attn,
    ln_ffn: Norm,
    ffn: Ffn,
}

struct Init<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
}

impl<S: ModelScalar> Init<'_, S> {
    fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols)
            .map(|_| S::tol(dist.sample(&mut self.rng)))
            .collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    fn constant(&mut self, name: &str, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Matrix::from_vec(1, cols, vec![S::tol(v); cols]))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| S::tol(self.rng.random_range(-a..a)))
            .collect();
        let w = self
            .store
            .add(format!("{name}.w"), Matrix::from_vec(fan_in, fan_out, data));
        let b = self.constant(&format!("{name}.b"), fan_out, 0.0);
        Linear { w, b }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.constant(&format!("{name}.gain"), d, 1.0),
            bias: self.constant(&format!("{name}.bias"), d, 0.0),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, f: usize) -> Ffn {
        Ffn {
            up: self.linear(&format!("{name}.up"), d, f),
            down: self.linear(&format!("{name}.down"), f, d),
        }
    }
}

/// Padded batch geometry: row `b * len + t` holds position `t` of
/// sequence `b`.
struct Padded {
    ids: Vec<usize>,
    positions: Vec<usize>,
    len: usize,
    lengths: Vec<usize>,
}

fn pad(seqs: &[&[usize]]) -> Padded {
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    let mut ids = Vec::with_capacity(seqs.len() * len);
    let mut positions = Vec::with_capacity(seqs.len() * len);
    for s in seqs {
        for t in 0..len {
            ids.push(s.get(t).copied().unwrap_or(0));
            positions.push(t);
        }
    }
    Padded {
        ids,
        positions,
        len,
        lengths: seqs.iter().map(|s| s.len()).collect(),
    }
}

/// Sum of losses and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub soft_ce_sum: S,
    pub gold_nll_sum: S,
    pub tokens: usize,
    /// Gradient of the mean soft cross-entropy over `tokens` positions.
    pub grads: Vec<Matrix<S>>,
}

/// Anything that assigns next-token logits to target prefixes.
pub trait SequenceScorer {
    fn vocab_size(&self) -> usize;

    /// `out[b][t]` are the logits for the token following `tgt_in[b][..=t]`
    /// given `src[b]`.
    fn score(&self, src: &[&[usize]], tgt_in: &[&[usize]]) -> Result<Vec<Vec<Vec<f64>>>, ModelError>;
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    config: ModelConfig,
    vocab_size: usize,
    params: ParamStore<S>,
    embed: ParamId,
    pos_src: ParamId,
    pos_tgt: ParamId,
    out_bias: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    enc_norm: Norm,
    dec_norm: Norm,
}

const PARAM_MAGIC: &[u8; 8] = b"MLSMPAR1";

impl<S: ModelScalar> Model<S> {
    pub fn new(config: ModelConfig, vocab_size: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::InvalidConfig("empty vocabulary".into()));
        }
        let d = config.model_dim;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let embed = init.normal("embed", vocab_size, d, (d as f64).powf(-0.5));
        let pos_src = init.normal("pos_src", config.max_positions, d, 0.5);
        let pos_tgt = init.normal("pos_tgt", config.max_positions, d, 0.5);
        let out_bias = init.constant("out_bias", vocab_size, 0.0);
        let encoder = (0..config.layers)
            .map(|l| EncoderLayer {
                ln_attn: init.norm(&format!("enc{l}.ln_attn"), d),
                attn: init.attn(&format!("enc{l}.attn"), d),
                ln_ffn: init.norm(&format!("enc{l}.ln_ffn"), d),
                ffn: init.ffn(&format!("enc{l}.ffn"), d, config.ffn_dim),
            })
            .collect();
        let decoder = (0..config.layers)
            .map(|l| DecoderLayer {
                ln_self: init.norm(&format!("dec{l}.ln_self"), d),
                self_attn: init.attn(&format!("dec{l}.self"), d),
                ln_cross: init.norm(&format!("dec{l}.ln_cross"), d),
                cross: init.attn(&format!("dec{l}.cross"), d),
                ln_ffn: init.norm(&format!("dec{l}.ln_ffn"), d),
                ffn: init.ffn(&format!("dec{l}.ffn"), d, config.ffn_dim),
            })
            .collect();
        let enc_norm = init.norm("enc.ln_final", d);
        let dec_norm = init.norm("dec.ln_final", d);
        Ok(Model {
            config,
            vocab_size,
            params,
            embed,
            pos_src,
            pos_tgt,
            out_bias,
            encoder,
            decoder,
            enc_norm,
            dec_norm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn check(&self, seqs: &[&[usize]]) -> Result<(), ModelError> {
        for s in seqs {
            if s.len() > self.config.max_positions {
                return Err(ModelError::SequenceTooLong {
                    len: s.len(),
                    max: self.config.max_positions,
                });
            }
            if let Some(&id) = s.iter().find(|&&id| id >= self.vocab_size) {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    k: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn embed_input(&self, tape: &mut Tape<'_, S>, p: &Padded, pos: ParamId) -> Var {
        let table = tape.param(self.embed);
        let scale = S::from_count(self.config.model_dim).sqrt();
        let e = tape.gather(table, &p.ids, scale);
        let pos = tape.param(pos);
        let pe = tape.gather(pos, &p.positions, S::one());
        let x = tape.add(e, pe);
        tape.dropout(x, self.config.dropout)
    }

    fn attention_block(
        &self,
        tape: &mut Tape<'_, S>,
        a: &Attn,
        xq: Var,
        xkv: Var,
        layout: AttnLayout,
    ) -> Var {
        let q = tape.linear(xq, a.q.w, a.q.b);
        let k = tape.linear(xkv, a.k.w, a.k.b);
        let v = tape.linear(xkv, a.v.w, a.v.b);
        let h = tape.attention(q, k, v, layout);
        tape.linear(h, a.o.w, a.o.b)
    }

    fn ffn_block(&self, tape: &mut Tape<'_, S>, f: &Ffn, x: Var) -> Var {
        let h = tape.linear(x, f.up.w, f.up.b);
        let h = tape.relu(h);
        tape.linear(h, f.down.w, f.down.b)
    }

    fn residual(&self, tape: &mut Tape<'_, S>, x: Var, sub: Var) -> Var {
        let sub = tape.dropout(sub, self.config.dropout);
        tape.add(x, sub)
    }

    fn encode(&self, tape: &mut Tape<'_, S>, src: &Padded) -> Var {
        let batch = src.lengths.len();
        let layout = AttnLayout {
            batch,
            q_len: src.len,
            k_len: src.len,
            key_lengths: src.lengths.clone(),
            heads: self.config.heads,
            causal: false,
        };
        let mut x = self.embed_input(tape, src, self.pos_src);
        for layer in &self.encoder {
            let h = tape.layer_norm(x, layer.ln_attn.gain, layer.ln_attn.bias);
            let a = self.attention_block(tape, &layer.attn, h, h, layout.clone());
            x = self.residual(tape, x, a);
            let h = tape.layer_norm(x, layer.ln_ffn.gain, layer.ln_ffn.bias);
            let f = self.ffn_block(tape, &layer.ffn, h);
            x = self.residual(tape, x, f);
        }
        tape.layer_norm(x, self.enc_norm.gain, self.enc_norm.bias)
    }

    fn decode(&self, tape: &mut Tape<'_, S>, memory: Var, src: &Padded, tgt: &Padded) -> Var {
        let batch = tgt.lengths.len();
        let self_layout = AttnLayout {
            batch,
            q_len: tgt.len,
            k_len: tgt.len,
            key_lengths: tgt.lengths.clone(),
            heads: self.config.heads,
            causal: true,
        };
        let cross_layout = AttnLayout {
            batch,
            q_len: tgt.len,
            k_len: src.len,
            key_lengths: src.lengths.clone(),
            heads: self.config.heads,
            causal: false,
        };
        let mut x = self.embed_input(tape, tgt, self.pos_tgt);
        for layer in &self.decoder {
            let h = tape.layer_norm(x, layer.ln_self.gain, layer.ln_self.bias);
            let a = self.attention_block(tape, &layer.self_attn, h, h, self_layout.clone());
            x = self.residual(tape, x, a);
            let h = tape.layer_norm(x, layer.ln_cross.gain, layer.ln_cross.bias);
            let a = self.attention_block(tape, &layer.cross, h, memory, cross_layout.clone());
            x = self.residual(tape, x, a);
            let h = tape.layer_norm(x, layer.ln_ffn.gain, layer.ln_ffn.bias);
            let f = self.ffn_block(tape, &layer.ffn, h);
            x = self.residual(tape, x, f);
        }
        let h = tape.layer_norm(x, self.dec_norm.gain, self.dec_norm.bias);
        let table = tape.param(self.embed);
        let logits = tape.matmul_bt(h, table);
        let bias = tape.param(self.out_bias);
        tape.add_row(logits, bias)
    }

    /// Logits for every padded target row; returns the tape's output
    /// variable together with the padded target geometry.
    fn forward<'t>(
        &'t self,
        dropout: Option<DropoutStream>,
        src: &[&[usize]],
        tgt_in: &[&[usize]],
    ) -> Result<(Tape<'t, S>, Var, Padded), ModelError> {
        assert_eq!(src.len(), tgt_in.len(), "one target prefix per source");
        self.check(src)?;
        self.check(tgt_in)?;
        let mut tape = Tape::new(&self.params);
        if let Some(d) = dropout {
            tape = tape.with_dropout(d);
        }
        let src_p = pad(src);
        let tgt_p = pad(tgt_in);
        let memory = self.encode(&mut tape, &src_p);
        let logits = self.decode(&mut tape, memory, &src_p, &tgt_p);
        Ok((tape, logits, tgt_p))
    }

    /// Teacher-forced loss and gradient of the mean soft cross-entropy over
    /// all non-padding target positions (including end-of-sentence).
    /// `inspect` sees every target distribution that is built.
    pub fn loss_and_grads<F>(
        &self,
        pairs: &[&EncodedPair],
        specials: SpecialIds,
        builder: &TargetBuilder<S>,
        dropout: Option<DropoutStream>,
        mut inspect: F,
    ) -> Result<StepOutput<S>, ModelError>
    where
        F: FnMut(&LabelDistribution<S>),
    {
        let src: Vec<&[usize]> = pairs.iter().map(|p| p.src.as_slice()).collect();
        let tgt_in: Vec<Vec<usize>> = pairs
            .iter()
            .map(|p| std::iter::once(specials.bos).chain(p.tgt.iter().copied()).collect())
            .collect();
        let tgt_refs: Vec<&[usize]> = tgt_in.iter().map(Vec::as_slice).collect();
        let (tape, out, tgt_p) = self.forward(dropout, &src, &tgt_refs)?;
        let logits = tape.value(out);
        let tokens: usize = pairs.iter().map(|p| p.tgt.len() + 1).sum();
        let scale = S::one() / S::from_count(tokens);
        let mut seed = Matrix::zeros(logits.rows, logits.cols);
        let mut soft_ce_sum = S::zero();
        let mut gold_nll_sum = S::zero();
        for (b, p) in pairs.iter().enumerate() {
            for t in 0..=p.tgt.len() {
                let gold = p.tgt.get(t).copied().unwrap_or(specials.eos);
                let target = builder.build(gold)?;
                inspect(&target);
                let row = b * tgt_p.len + t;
                let loss = cross_entropy_with_grad(&target, logits.row(row), scale, seed.row_mut(row))?;
                soft_ce_sum += loss.soft_ce;
                gold_nll_sum += loss.gold_nll;
            }
        }
        let grads = tape.backward(out, seed);
        Ok(StepOutput {
            soft_ce_sum,
            gold_nll_sum,
            tokens,
            grads,
        })
    }

    /// Serializes all parameters as little-endian `f64`.
    pub fn params_to_bytes(&self) -> Vec<u8> {
        let mut out = PARAM_MAGIC.to_vec();
        out.extend((self.params.len() as u64).to_le_bytes());
        for t in self.params.tensors() {
            out.extend((t.rows as u64).to_le_bytes());
            out.extend((t.cols as u64).to_le_bytes());
            for v in &t.data {
                out.extend(v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
        }
        out
    }

    /// Replaces the parameters with those in `bytes`; shapes must match.
    pub fn load_params(&mut self, bytes: &[u8]) -> Result<(), ModelError> {
        let fail = |m: &str| ModelError::Format(m.to_owned());
        let mut cursor = bytes
            .strip_prefix(PARAM_MAGIC.as_slice())
            .ok_or_else(|| fail("bad magic"))?;
        let mut next = || -> Result<u64, ModelError> {
            let (head, rest) = cursor.split_at_checked(8).ok_or_else(|| fail("truncated"))?;
            cursor = rest;
            Ok(u64::from_le_bytes(head.try_into().expect("8 bytes")))
        };
        if next()? as usize != self.params.len() {
            return Err(fail("tensor count does not match the model config"));
        }
        let mut loaded = Vec::with_capacity(self.params.len());
        for t in self.params.tensors() {
            let (rows, cols) = (next()? as usize, next()? as usize);
            if (rows, cols) != (t.rows, t.cols) {
                return Err(fail("tensor shape does not match the model config"));
            }
            let data = (0..rows * cols)
                .map(|_| next().map(|bits| S::tol(f64::from_bits(bits))))
                .collect::<Result<Vec<_>, _>>()?;
            loaded.push(Matrix::from_vec(rows, cols, data));
        }
        if !cursor.is_empty() {
            return Err(fail("trailing bytes"));
        }
        for (dst, src) in self.params.tensors_mut().iter_mut().zip(loaded) {
            *dst = src;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.params_to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(config: ModelConfig, vocab_size: usize, path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut model = Self::new(config, vocab_size)?;
        model.load_params(&bytes)?;
        Ok(model)
    }
}

impl<S: ModelScalar> SequenceScorer for Model<S> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, src: &[&[usize]], tgt_in: &[&[usize]]) -> Result<Vec<Vec<Vec<f64>>>, ModelError> {
        let (tape, out, tgt_p) = self.forward(None, src, tgt_in)?;
        let logits = tape.value(out);
        Ok(tgt_in
            .iter()
            .enumerate()
            .map(|(b, seq)| {
                (0..seq.len())
                    .map(|t| {
                        logits
                            .row(b * tgt_p.len + t)
                            .iter()
                            .map(|v| v.to_f64().unwrap_or(f64::NAN))
                            .collect()
                    })
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            model_dim: 16,
            heads: 2,
            ffn_dim: 24,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::<f64>::new(cfg(), 12).unwrap();
        let b = Model::<f64>::new(cfg(), 12).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Model::<f64>::new(ModelConfig { init_seed: 2, ..cfg() }, 12).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn head_dim() {
        assert_eq!(ModelConfig::default().head_dim(), 32);
        let bad = ModelConfig { heads: 3, ..ModelConfig::default() };
        assert!(matches!(Model::<f32>::new(bad, 5), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn forward_shapes_are_finite() {
        let m = Model::<f64>::new(cfg(), 12).unwrap();
        let out = m.score(&[&[4, 5, 6]], &[&[1, 7, 8]]).unwrap();
        assert_eq!(out[0].len(), 3);
        for row in &out[0] {
            assert_eq!(row.len(), 12);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn padding_does_not_change_scores() {
        let m = Model::<f64>::new(cfg(), 12).unwrap();
        let alone = m.score(&[&[4, 5]], &[&[1, 7]]).unwrap();
        let batched = m.score(&[&[4, 5], &[6, 7, 8, 9]], &[&[1, 7], &[1, 2, 3, 4, 5]]).unwrap();
        for (a, b) in alone[0].iter().flatten().zip(batched[0].iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_prefix_scores_are_stable() {
        let m = Model::<f64>::new(cfg(), 12).unwrap();
        let short = m.score(&[&[4, 5]], &[&[1, 7]]).unwrap();
        let long = m.score(&[&[4, 5]], &[&[1, 7, 9]]).unwrap();
        for (a, b) in short[0].iter().flatten().zip(long[0][..2].iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_bytes_round_trip() {
        let a = Model::<f64>::new(cfg(), 12).unwrap();
        let mut b = Model::<f64>::new(ModelConfig { init_seed: 5, ..cfg() }, 12).unwrap();
        b.load_params(&a.params_to_bytes()).unwrap();
        assert_eq!(a.params(), b.params());
        let mut c = Model::<f64>::new(cfg(), 13).unwrap();
        assert!(c.load_params(&a.params_to_bytes()).is_err());
    }

    #[test]
    fn rejects_long_sequences() {
        let m = Model::<f64>::new(ModelConfig { max_positions: 2, ..cfg() }, 12).unwrap();
        assert!(matches!(
            m.score(&[&[1, 2, 3]], &[&[1]]),
            Err(ModelError::SequenceTooLong { len: 3, max: 2 })
        ));
    }
}
