//! Batched greedy decoding.

use mlsmooth_core::loss::softmax;

use crate::model::{ModelError, SequenceScorer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeStep {
    pub token: usize,
    /// Probability of the chosen token.
    pub confidence: f64,
    /// `|Σ p - 1|` of the step's softmax.
    pub prob_sum_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Output tokens, without the end-of-sentence marker.
    pub tokens: Vec<usize>,
    /// One entry per decoder step, including the step that chose EOS.
    pub steps: Vec<DecodeStep>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding of every source in `srcs`, stopping at `eos` or after
/// `max_len` output tokens.
pub fn greedy_decode<M: SequenceScorer + ?Sized>(
    model: &M,
    srcs: &[&[usize]],
    bos: usize,
    eos: usize,
    max_len: usize,
) -> Result<Vec<Decoded>, ModelError> {
    let mut out: Vec<Decoded> = srcs
        .iter()
        .map(|_| Decoded {
            tokens: Vec::new(),
            steps: Vec::new(),
        })
        .collect();
    let mut prefixes: Vec<Vec<usize>> = srcs.iter().map(|_| vec![bos]).collect();
    let mut active: Vec<usize> = (0..srcs.len()).collect();
    for _ in 0..max_len {
        if active.is_empty() {
            break;
        }
        let src: Vec<&[usize]> = active.iter().map(|&i| srcs[i]).collect();
        let tgt: Vec<&[usize]> = active.iter().map(|&i| prefixes[i].as_slice()).collect();
        let scores = model.score(&src, &tgt)?;
        let mut still = Vec::with_capacity(active.len());
        for (&i, rows) in active.iter().zip(scores) {
            let last = rows.last().expect("prefix is non-empty");
            let probs = softmax(last)?;
            let token = argmax(&probs);
            let sum: f64 = probs.iter().sum();
            out[i].steps.push(DecodeStep {
                token,
                confidence: probs[token],
                prob_sum_error: (sum - 1.0).abs(),
            });
            if token == eos {
                continue;
            }
            out[i].tokens.push(token);
            prefixes[i].push(token);
            still.push(i);
        }
        active = still;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits `src[t]` at step `t`, then EOS.
    struct Echo {
        k: usize,
        eos: usize,
    }

    impl SequenceScorer for Echo {
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
                            z[s.get(i).copied().unwrap_or(self.eos)] = 5.0;
                            z
                        })
                        .collect()
                })
                .collect())
        }
    }

    #[test]
    fn stops_at_eos_or_limit() {
        let m = Echo { k: 6, eos: 2 };
        let out = greedy_decode(&m, &[&[3, 4, 5], &[5]], 1, 2, 10).unwrap();
        assert_eq!(out[0].tokens, vec![3, 4, 5]);
        assert_eq!(out[0].steps.len(), 4);
        assert_eq!(out[1].tokens, vec![5]);
        let short = greedy_decode(&m, &[&[3, 4, 5]], 1, 2, 2).unwrap();
        assert_eq!(short[0].tokens, vec![3, 4]);
        assert!(greedy_decode(&m, &[&[3]], 1, 2, 0).unwrap()[0].tokens.is_empty());
    }

    #[test]
    fn ties_go_to_lowest_id() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }
}
