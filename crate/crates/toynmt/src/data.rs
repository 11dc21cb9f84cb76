//! Synthetic parallel corpora with a known vocabulary overlap.
//!
//! Source-only tokens are named `s{i}`, shared tokens `c{i}` and
//! target-only tokens `t{i}`. A second language pair, when present, uses
//! `r{i}` and `d{i}` for its source-only and shared tokens and translates
//! into the same `t{i}` inventory.

use std::fs;
use std::path::Path;

use mlsmooth_core::{
    build_joint, partition, CategoryPartition, SpecialTokens, Vocabulary,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("corpus split is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub n_source_only: usize,
    pub n_common: usize,
    pub n_target_only: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_pairs: usize,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    /// Probability that a position holds a shared token copied verbatim.
    pub common_token_rate: f64,
    pub seed: u64,
    /// Another source language translating into the same target inventory.
    pub second_pair: Option<Box<SyntheticTaskSpec>>,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            n_source_only: 24,
            n_common: 8,
            n_target_only: 24,
            min_len: 3,
            max_len: 8,
            train_pairs: 2000,
            dev_pairs: 100,
            test_pairs: 100,
            common_token_rate: 0.25,
            seed: 1,
            second_pair: None,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        self.validate_one()?;
        if let Some(second) = &self.second_pair {
            second.validate_one()?;
            if second.second_pair.is_some() {
                return Err(DataError::InvalidSpec(
                    "only one additional language pair is supported".into(),
                ));
            }
            if second.n_target_only != self.n_target_only {
                return Err(DataError::InvalidSpec(
                    "both pairs must share the target-only inventory".into(),
                ));
            }
        }
        Ok(())
    }

    fn validate_one(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_owned()));
        if self.n_target_only == 0 {
            return bad("n_target_only must be at least 1");
        }
        if self.n_source_only > self.n_target_only {
            return bad("n_source_only must not exceed n_target_only");
        }
        if self.min_len > self.max_len {
            return bad("min_len exceeds max_len");
        }
        if !(0.0..=1.0).contains(&self.common_token_rate) {
            return bad("common_token_rate must lie in [0, 1]");
        }
        if self.common_token_rate > 0.0 && self.n_common == 0 {
            return bad("common_token_rate > 0 needs at least one common token");
        }
        if self.common_token_rate < 1.0 && self.n_source_only == 0 {
            return bad("common_token_rate < 1 needs at least one source-only token");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Sentence pair as joint-vocabulary ids, without BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub joint: Vocabulary,
    pub partition: CategoryPartition,
}

/// Ids of the special tokens in a joint vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: usize,
    pub bos: usize,
    pub eos: usize,
    pub unk: usize,
}

impl SpecialIds {
    pub fn lookup(joint: &Vocabulary) -> Option<Self> {
        Some(SpecialIds {
            pad: joint.id(SpecialTokens::PAD)?,
            bos: joint.id(SpecialTokens::BOS)?,
            eos: joint.id(SpecialTokens::EOS)?,
            unk: joint.id(SpecialTokens::UNK)?,
        })
    }
}

struct Inventory {
    source: Vec<String>,
    common: Vec<String>,
    mapping: Vec<usize>,
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn sample_pairs(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticTaskSpec,
    inv: &Inventory,
    targets: &[String],
    count: usize,
) -> Vec<SentencePair> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut src = Vec::with_capacity(len);
            let mut tgt = Vec::with_capacity(len);
            for _ in 0..len {
                if rng.random::<f64>() < spec.common_token_rate {
                    let c = &inv.common[rng.random_range(0..inv.common.len())];
                    src.push(c.clone());
                    tgt.push(c.clone());
                } else {
                    let i = rng.random_range(0..inv.source.len());
                    src.push(inv.source[i].clone());
                    tgt.push(targets[inv.mapping[i]].clone());
                }
            }
            SentencePair { src, tgt }
        })
        .collect()
}

fn generate_pair(
    spec: &SyntheticTaskSpec,
    source_prefix: &str,
    common_prefix: &str,
    targets: &[String],
) -> (Inventory, [Vec<SentencePair>; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut image: Vec<usize> = (0..spec.n_target_only).collect();
    image.shuffle(&mut rng);
    image.truncate(spec.n_source_only);
    let inv = Inventory {
        source: names(source_prefix, spec.n_source_only),
        common: names(common_prefix, spec.n_common),
        mapping: image,
    };
    let train = sample_pairs(&mut rng, spec, &inv, targets, spec.train_pairs);
    let dev = sample_pairs(&mut rng, spec, &inv, targets, spec.dev_pairs);
    let test = sample_pairs(&mut rng, spec, &inv, targets, spec.test_pairs);
    (inv, [train, dev, test])
}

/// Generates a corpus whose joint vocabulary has exactly the requested
/// category sizes, plus the four special tokens as common.
pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<ParallelCorpus, DataError> {
    spec.validate()?;
    let targets = names("t", spec.n_target_only);
    let (inv, [mut train, mut dev, mut test]) = generate_pair(spec, "s", "c", &targets);
    let specials = SpecialTokens::standard();
    let mut src_tokens: Vec<String> = specials.tokens.clone();
    src_tokens.extend(inv.source.iter().cloned());
    src_tokens.extend(inv.common.iter().cloned());
    let mut tgt_tokens: Vec<String> = specials.tokens.clone();
    tgt_tokens.extend(inv.common.iter().cloned());
    if let Some(second) = &spec.second_pair {
        let (inv2, [tr, dv, te]) = generate_pair(second, "r", "d", &targets);
        src_tokens.extend(inv2.source.iter().cloned());
        src_tokens.extend(inv2.common.iter().cloned());
        tgt_tokens.extend(inv2.common.iter().cloned());
        train.extend(tr);
        dev.extend(dv);
        test.extend(te);
    }
    tgt_tokens.extend(targets);
    let src_vocab = Vocabulary::new(src_tokens).expect("generated names are unique");
    let tgt_vocab = Vocabulary::new(tgt_tokens).expect("generated names are unique");
    ParallelCorpus::assemble(train, dev, test, src_vocab, tgt_vocab)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_vocab(path: &Path) -> Result<Vocabulary, DataError> {
    Vocabulary::parse(&read(path)?).map_err(|e| DataError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn lines_to_sentences(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect()
}

fn sentences_to_text<'a>(sentences: impl Iterator<Item = &'a Vec<String>>) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    out
}

impl ParallelCorpus {
    fn assemble(
        train: Vec<SentencePair>,
        dev: Vec<SentencePair>,
        test: Vec<SentencePair>,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
    ) -> Result<Self, DataError> {
        let joint = build_joint(&src_vocab, &tgt_vocab);
        let partition = partition(&joint, &src_vocab, &tgt_vocab, &SpecialTokens::standard())
            .map_err(|e| DataError::InvalidSpec(e.to_string()))?;
        if SpecialIds::lookup(&joint).is_none() {
            return Err(DataError::InvalidSpec(
                "vocabularies lack the special tokens".into(),
            ));
        }
        Ok(ParallelCorpus {
            train,
            dev,
            test,
            src_vocab,
            tgt_vocab,
            joint,
            partition,
        })
    }

    pub fn split(&self, split: Split) -> &[SentencePair] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn special_ids(&self) -> SpecialIds {
        SpecialIds::lookup(&self.joint).expect("checked on construction")
    }

    /// Maps a split to joint ids; unknown tokens become `<unk>`.
    pub fn encode(&self, split: Split) -> Vec<EncodedPair> {
        let unk = self.special_ids().unk;
        let ids = |s: &[String]| s.iter().map(|t| self.joint.id(t).unwrap_or(unk)).collect();
        self.split(split)
            .iter()
            .map(|p| EncodedPair {
                src: ids(&p.src),
                tgt: ids(&p.tgt),
            })
            .collect()
    }

    /// Writes `{train,dev,test}.{src,tgt}`, the three vocabularies and
    /// `partition.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for split in Split::ALL {
            let pairs = self.split(split);
            write(
                &dir.join(format!("{}.src", split.name())),
                &sentences_to_text(pairs.iter().map(|p| &p.src)),
            )?;
            write(
                &dir.join(format!("{}.tgt", split.name())),
                &sentences_to_text(pairs.iter().map(|p| &p.tgt)),
            )?;
        }
        write(&dir.join("src.vocab"), &self.src_vocab.to_text())?;
        write(&dir.join("tgt.vocab"), &self.tgt_vocab.to_text())?;
        write(&dir.join("joint.vocab"), &self.joint.to_text())?;
        write(&dir.join("partition.tsv"), &self.partition.to_tsv())?;
        Ok(())
    }

    /// Reads a corpus written by [`ParallelCorpus::write_dir`]. The joint
    /// vocabulary and partition are rebuilt from the two side vocabularies.
    pub fn read_dir(dir: &Path) -> Result<Self, DataError> {
        let src_vocab = read_vocab(&dir.join("src.vocab"))?;
        let tgt_vocab = read_vocab(&dir.join("tgt.vocab"))?;
        let mut splits = Vec::new();
        for split in Split::ALL {
            let sp = dir.join(format!("{}.src", split.name()));
            let tp = dir.join(format!("{}.tgt", split.name()));
            let src = lines_to_sentences(&read(&sp)?);
            let tgt = lines_to_sentences(&read(&tp)?);
            if src.len() != tgt.len() {
                return Err(DataError::Malformed {
                    path: tp.display().to_string(),
                    message: format!("{} lines, source side has {}", tgt.len(), src.len()),
                });
            }
            splits.push(
                src.into_iter()
                    .zip(tgt)
                    .map(|(src, tgt)| SentencePair { src, tgt })
                    .collect::<Vec<_>>(),
            );
        }
        let test = splits.pop().unwrap_or_default();
        let dev = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        Self::assemble(train, dev, test, src_vocab, tgt_vocab)
    }
}
