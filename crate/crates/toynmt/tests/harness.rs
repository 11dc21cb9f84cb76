use std::collections::HashMap;

use mlsmooth_core::{Betas, SmoothingSpec, TargetBuilder};
use mlsmooth_toynmt::data::SpecialIds;
use mlsmooth_toynmt::dropout::DropoutStream;
use mlsmooth_toynmt::eval::evaluate;
use mlsmooth_toynmt::model::ModelError;
use mlsmooth_toynmt::{
    compare, gen_synthetic, greedy_decode, run_one, EncodedPair, EvalOptions, Model, ModelConfig,
    ParallelCorpus, RunSettings, SequenceScorer, Split, SyntheticTaskSpec, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bijection_corpus() -> ParallelCorpus {
    gen_synthetic(&SyntheticTaskSpec {
        n_source_only: 10,
        n_common: 4,
        n_target_only: 10,
        train_pairs: 200,
        dev_pairs: 30,
        test_pairs: 30,
        common_token_rate: 0.0,
        ..SyntheticTaskSpec::default()
    })
    .unwrap()
}

/// Knows the token mapping and puts a large logit on the correct next token.
struct Oracle {
    k: usize,
    map: HashMap<usize, usize>,
    eos: usize,
}

impl Oracle {
    fn new(corpus: &ParallelCorpus) -> Self {
        let mut map = HashMap::new();
        for p in corpus.encode(Split::Train).iter().chain(&corpus.encode(Split::Dev)) {
            for (&s, &t) in p.src.iter().zip(&p.tgt) {
                map.insert(s, t);
            }
        }
        Oracle {
            k: corpus.joint.len(),
            map,
            eos: corpus.special_ids().eos,
        }
    }
}

impl SequenceScorer for Oracle {
    fn vocab_size(&self) -> usize {
        self.k
    }

    fn score(&self, src: &[&[usize]], tgt: &[&[usize]]) -> Result<Vec<Vec<Vec<f64>>>, ModelError> {
        Ok(src
            .iter()
            .zip(tgt)
            .map(|(s, t)| {
                (0..t.len())
                    .map(|i| {
                        let mut z = vec![0.0; self.k];
                        let next = s.get(i).map(|x| self.map[x]).unwrap_or(self.eos);
                        z[next] = 40.0;
                        z
                    })
                    .collect()
            })
            .collect())
    }
}

struct Flat(usize);

impl SequenceScorer for Flat {
    fn vocab_size(&self) -> usize {
        self.0
    }

    fn score(&self, _: &[&[usize]], tgt: &[&[usize]]) -> Result<Vec<Vec<Vec<f64>>>, ModelError> {
        Ok(tgt.iter().map(|t| vec![vec![0.0; self.0]; t.len()]).collect())
    }
}

#[test]
fn oracle_model_is_perfect() {
    let corpus = bijection_corpus();
    let m = evaluate(
        &Oracle::new(&corpus),
        &corpus.encode(Split::Dev),
        &corpus.partition,
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(m.bleu, 1.0);
    assert_eq!(m.chrf, 1.0);
    assert!(m.ece_teacher_forced < 1e-9);
    assert!(m.ece_inference < 1e-9);
    assert!(m.mean_source_mass < 1e-9);
    assert!((m.ppl - 1.0).abs() < 1e-9);
    assert!(m.max_prob_sum_error <= 1e-9);
}

#[test]
fn uniform_model_has_perplexity_k() {
    let corpus = bijection_corpus();
    let k = corpus.joint.len();
    let m = evaluate(&Flat(k), &corpus.encode(Split::Dev), &corpus.partition, &EvalOptions::default()).unwrap();
    assert!((m.ppl - k as f64).abs() / k as f64 <= 0.01);
}

#[test]
fn evaluate_rejects_empty_corpus() {
    let corpus = bijection_corpus();
    assert!(evaluate(&Flat(5), &[], &corpus.partition, &EvalOptions::default()).is_err());
}

#[test]
fn oracle_decodes_mapped_sequence() {
    let corpus = bijection_corpus();
    let oracle = Oracle::new(&corpus);
    let ids = corpus.special_ids();
    let pairs = corpus.encode(Split::Test);
    let srcs: Vec<&[usize]> = pairs.iter().map(|p| p.src.as_slice()).collect();
    let out = greedy_decode(&oracle, &srcs, ids.bos, ids.eos, 20).unwrap();
    for (p, d) in pairs.iter().zip(out) {
        assert_eq!(d.tokens, p.tgt);
    }
}

#[test]
fn untrained_model_decodes_within_limit() {
    let corpus = bijection_corpus();
    let model = Model::<f32>::new(ModelConfig::default(), corpus.joint.len()).unwrap();
    let ids = corpus.special_ids();
    let pairs = corpus.encode(Split::Dev);
    let srcs: Vec<&[usize]> = pairs.iter().take(5).map(|p| p.src.as_slice()).collect();
    for d in greedy_decode(&model, &srcs, ids.bos, ids.eos, 7).unwrap() {
        assert!(d.tokens.len() <= 7);
        for s in &d.steps {
            assert!(s.prob_sum_error <= 1e-9);
        }
    }
    assert!(greedy_decode(&model, &srcs, ids.bos, ids.eos, 0).unwrap().iter().all(|d| d.tokens.is_empty()));
}

fn micro_loss(
    model: &Model<f64>,
    batch: &[&EncodedPair],
    ids: SpecialIds,
    builder: &TargetBuilder<f64>,
) -> (f64, Vec<mlsmooth_toynmt::Matrix<f64>>) {
    let out = model
        .loss_and_grads(batch, ids, builder, Some(DropoutStream::new(3, 7)), |_| {})
        .unwrap();
    (out.soft_ce_sum / out.tokens as f64, out.grads)
}

#[test]
fn micro_model_gradients_match_finite_differences() {
    let corpus = bijection_corpus();
    let cfg = ModelConfig {
        layers: 1,
        model_dim: 8,
        heads: 1,
        ffn_dim: 16,
        dropout: 0.1,
        max_positions: 12,
        init_seed: 11,
    };
    let mut model = Model::<f64>::new(cfg, corpus.joint.len()).unwrap();
    let pairs = corpus.encode(Split::Train);
    let batch: Vec<&EncodedPair> = pairs.iter().take(4).collect();
    let ids = corpus.special_ids();
    let builder = TargetBuilder::new(&corpus.partition, SmoothingSpec::weighted(0.1, Betas::equal())).unwrap();
    let (_, grads) = micro_loss(&model, &batch, ids, &builder);

    let total = model.params().scalar_count();
    let sample = total.div_ceil(100);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..sample {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= model.params().tensors()[t].len() {
            flat -= model.params().tensors()[t].len();
            t += 1;
        }
        let orig = model.params().tensors()[t].data[flat];
        model.params_mut().tensors_mut()[t].data[flat] = orig + h;
        let plus = micro_loss(&model, &batch, ids, &builder).0;
        model.params_mut().tensors_mut()[t].data[flat] = orig - h;
        let minus = micro_loss(&model, &batch, ids, &builder).0;
        model.params_mut().tensors_mut()[t].data[flat] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let an = grads[t].data[flat];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-3, "max relative error {worst}");
}

fn short_settings(steps: usize) -> RunSettings {
    RunSettings {
        model: ModelConfig {
            model_dim: 16,
            heads: 2,
            ffn_dim: 32,
            layers: 1,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            max_steps: steps,
            warmup_steps: steps.min(20),
            eval_interval: 10,
            train_eval_pairs: 20,
            ..TrainConfig::default()
        },
        eval: EvalOptions::default(),
    }
}

#[test]
fn training_is_deterministic_and_records_curves() {
    let corpus = bijection_corpus();
    let settings = short_settings(25);
    let spec = SmoothingSpec::masked(0.1);
    let (ma, a) = run_one::<f32>(&corpus, &spec, &settings, 3).unwrap();
    let (mb, b) = run_one::<f32>(&corpus, &spec, &settings, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma.params_to_bytes(), mb.params_to_bytes());
    assert_eq!(a.train.steps, vec![0, 10, 20, 25]);
    assert_eq!(a.train.train_ppl.len(), 4);
    assert_eq!(a.train.dev_ppl.len(), 4);
    assert_eq!(a.train.batch_loss.len(), 25);
    assert_eq!(a.train.max_target_source_mass, 0.0);
    assert!(a.train.targets_built > 0);
    let (_, c) = run_one::<f32>(&corpus, &spec, &settings, 4).unwrap();
    assert_ne!(a.train.batch_loss, c.train.batch_loss);
}

#[test]
fn uniform_targets_put_mass_on_source_tokens() {
    let corpus = bijection_corpus();
    let (_, r) = run_one::<f32>(&corpus, &SmoothingSpec::uniform(0.1), &short_settings(3), 1).unwrap();
    let k = corpus.partition.active_counts().total() as f64;
    let expected = 0.1 * corpus.partition.counts().source as f64 / k;
    assert!((r.train.max_target_source_mass - expected).abs() < 1e-6);
}

#[test]
fn compare_report_shape_and_single_run_equivalence() {
    let corpus = bijection_corpus();
    let settings = short_settings(12);
    let specs = [SmoothingSpec::uniform(0.1), SmoothingSpec::masked(0.1)];
    let report = compare::<f32>(&corpus, &specs, &settings, &[1, 2]).unwrap();
    assert_eq!(report.runs.len(), 4);
    assert_eq!(report.baseline, "uniform-a0.1");
    let order: Vec<(&str, u64)> = report.runs.iter().map(|r| (r.label.as_str(), r.seed)).collect();
    assert_eq!(
        order,
        vec![("uniform-a0.1", 1), ("uniform-a0.1", 2), ("masked-a0.1", 1), ("masked-a0.1", 2)]
    );
    assert_eq!(report.summary.len(), 2);
    assert!(report.summary[0].mean_delta.values().all(|&d| d == 0.0));
    assert_eq!(report.summary[1].seed_deltas["ppl"].len(), 2);

    let single = compare::<f32>(&corpus, &specs[1..], &settings, &[2]).unwrap();
    let (_, direct) = run_one::<f32>(&corpus, &specs[1], &settings, 2).unwrap();
    assert_eq!(single.runs[0], direct);
    assert_eq!(report.run("masked-a0.1", 2), Some(&direct));
}

#[test]
fn invalid_spec_for_corpus_is_rejected() {
    let corpus = bijection_corpus();
    let bad = SmoothingSpec::weighted(0.1, Betas::new(0.5, 0.0, 0.6));
    assert!(run_one::<f32>(&corpus, &bad, &short_settings(2), 1).is_err());
}

#[test]
fn one_hot_learns_bijection_in_500_steps() {
    let corpus = gen_synthetic(&SyntheticTaskSpec {
        common_token_rate: 0.0,
        ..SyntheticTaskSpec::default()
    })
    .unwrap();
    let settings = RunSettings {
        model: ModelConfig::default(),
        train: TrainConfig {
            max_steps: 500,
            ..TrainConfig::default()
        },
        eval: EvalOptions::default(),
    };
    let (_, r) = run_one::<f32>(&corpus, &SmoothingSpec::one_hot(), &settings, 1).unwrap();
    assert!(r.dev.ppl < 1.5, "dev ppl {}", r.dev.ppl);
}
