//! Calibration error and corpus-level translation metrics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use thiserror::Error;

use crate::scalar::{Real, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no prediction samples")]
    EmptySamples,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("confidence of sample {0} is outside [0, 1]")]
    ConfidenceOutOfRange(usize),
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("every reference is empty")]
    EmptyReferences,
}

/// Confidence of one prediction (its top probability) and whether it was right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSample<S> {
    pub confidence: S,
    pub correct: bool,
}

impl<S> PredictionSample<S> {
    pub fn new(confidence: S, correct: bool) -> Self {
        PredictionSample {
            confidence,
            correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBin<S> {
    pub lower: S,
    pub upper: S,
    pub count: usize,
    /// Zero for an empty bin.
    pub mean_confidence: S,
    /// Zero for an empty bin.
    pub accuracy: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport<S> {
    pub num_bins: usize,
    pub num_samples: usize,
    pub bins: Vec<CalibrationBin<S>>,
    pub ece: S,
}

/// Bin `i` covers `[i/M, (i+1)/M)`; the last bin also includes 1.
fn bin_edges<S: Scalar>(m: usize) -> Vec<S> {
    let denom = S::from_count(m);
    (0..=m).map(|i| S::from_count(i) / denom).collect()
}

fn bin_index<S: Scalar>(edges: &[S], c: S) -> usize {
    // Number of interior edges that are <= c.
    let interior = &edges[1..edges.len() - 1];
    interior.partition_point(|&e| e <= c)
}

/// Expected calibration error over `m` equal-width confidence bins.
///
/// The returned report also carries the per-bin rows.
pub fn ece<S: Scalar>(
    samples: &[PredictionSample<S>],
    m: usize,
) -> Result<CalibrationReport<S>, MetricsError> {
    if m == 0 {
        return Err(MetricsError::ZeroBins);
    }
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let edges = bin_edges::<S>(m);
    let mut conf_sum = vec![S::zero(); m];
    let mut hits = vec![0usize; m];
    let mut counts = vec![0usize; m];
    for (i, s) in samples.iter().enumerate() {
        if !(s.confidence >= S::zero() && s.confidence <= S::one()) {
            return Err(MetricsError::ConfidenceOutOfRange(i));
        }
        let b = bin_index(&edges, s.confidence);
        conf_sum[b] = conf_sum[b] + s.confidence;
        counts[b] += 1;
        if s.correct {
            hits[b] += 1;
        }
    }
    let n = S::from_count(samples.len());
    let mut ece = S::zero();
    let mut bins = Vec::with_capacity(m);
    for b in 0..m {
        let (mean_confidence, accuracy) = if counts[b] == 0 {
            (S::zero(), S::zero())
        } else {
            let c = S::from_count(counts[b]);
            (conf_sum[b] / c, S::from_count(hits[b]) / c)
        };
        if counts[b] > 0 {
            ece = ece + S::from_count(counts[b]) / n * (accuracy - mean_confidence).abs();
        }
        bins.push(CalibrationBin {
            lower: edges[b],
            upper: edges[b + 1],
            count: counts[b],
            mean_confidence,
            accuracy,
        });
    }
    Ok(CalibrationReport {
        num_bins: m,
        num_samples: samples.len(),
        bins,
        ece,
    })
}

/// Same computation as [`ece`], named for the tabulated use.
pub fn reliability_table<S: Scalar>(
    samples: &[PredictionSample<S>],
    m: usize,
) -> Result<CalibrationReport<S>, MetricsError> {
    ece(samples, m)
}

impl<S: Real> CalibrationReport<S> {
    /// Key-value header followed by one whitespace-separated row per bin.
    pub fn to_text(&self) -> String {
        let f = |x: S| x.to_f64().unwrap_or(f64::NAN);
        let mut out = String::new();
        let _ = writeln!(out, "bins = {}", self.num_bins);
        let _ = writeln!(out, "samples = {}", self.num_samples);
        let _ = writeln!(out, "ece = {}", f(self.ece));
        let _ = writeln!(out, "# lower upper count mean_confidence accuracy");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                f(b.lower),
                f(b.upper),
                b.count,
                f(b.mean_confidence),
                f(b.accuracy)
            );
        }
        out
    }
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches<T: Hash + Eq>(hyp: &HashMap<&[T], usize>, reference: &HashMap<&[T], usize>) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Corpus BLEU in `[0, 1]` with uniform weights over orders `1..=max_n`,
/// a single reference per segment and no smoothing.
pub fn bleu<H, R, T>(hypotheses: &[H], references: &[R], max_n: usize) -> Result<f64, MetricsError>
where
    H: AsRef<[T]>,
    R: AsRef<[T]>,
    T: Hash + Eq,
{
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if references.iter().all(|r| r.as_ref().is_empty()) {
        return Err(MetricsError::EmptyReferences);
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            matches[n - 1] += clipped_matches(&hc, &rc);
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || max_n == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matches[n] == 0 || totals[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok((bp * (log_sum / max_n as f64).exp()).min(1.0))
}

/// Corpus chrF in `[0, 1]`: the mean over character orders `1..=n` of the
/// F-beta score of corpus-summed n-gram statistics. Whitespace is removed
/// before n-grams are extracted. Orders for which neither side has any
/// n-gram are left out of the mean.
pub fn chrf<H, R>(hypotheses: &[H], references: &[R], n: usize, beta: f64) -> Result<f64, MetricsError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let strip = |s: &str| -> Vec<char> { s.chars().filter(|c| !c.is_whitespace()).collect() };
    let mut hyp_tot = vec![0usize; n];
    let mut ref_tot = vec![0usize; n];
    let mut hit = vec![0usize; n];
    for (h, r) in hypotheses.iter().zip(references) {
        let h = strip(h.as_ref());
        let r = strip(r.as_ref());
        for order in 1..=n {
            let hc = ngram_counts(&h, order);
            let rc = ngram_counts(&r, order);
            hit[order - 1] += clipped_matches(&hc, &rc);
            hyp_tot[order - 1] += h.len().saturating_sub(order - 1);
            ref_tot[order - 1] += r.len().saturating_sub(order - 1);
        }
    }
    let b2 = beta * beta;
    let mut total = 0.0;
    let mut orders = 0usize;
    for i in 0..n {
        if hyp_tot[i] == 0 && ref_tot[i] == 0 {
            continue;
        }
        orders += 1;
        let prec = if hyp_tot[i] > 0 {
            hit[i] as f64 / hyp_tot[i] as f64
        } else {
            0.0
        };
        let rec = if ref_tot[i] > 0 {
            hit[i] as f64 / ref_tot[i] as f64
        } else {
            0.0
        };
        let denom = b2 * prec + rec;
        if denom > 0.0 {
            total += (1.0 + b2) * prec * rec / denom;
        }
    }
    if orders == 0 {
        return Ok(0.0);
    }
    Ok(total / orders as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Exact;

    fn four_samples() -> Vec<PredictionSample<f64>> {
        vec![
            PredictionSample::new(0.9, true),
            PredictionSample::new(0.8, false),
            PredictionSample::new(0.3, false),
            PredictionSample::new(0.2, true),
        ]
    }

    #[test]
    fn perfect_calibration() {
        let s = vec![PredictionSample::new(1.0f64, true); 7];
        assert_eq!(ece(&s, 10).unwrap().ece, 0.0);
    }

    #[test]
    fn hand_case_two_bins() {
        let r = reliability_table(&four_samples(), 2).unwrap();
        assert_eq!(r.bins[0].count, 2);
        assert_eq!(r.bins[1].count, 2);
        assert!((r.bins[1].mean_confidence - 0.85).abs() < 1e-15);
        assert_eq!(r.bins[1].accuracy, 0.5);
        assert!((r.bins[0].mean_confidence - 0.25).abs() < 1e-15);
        assert!((r.ece - 0.30).abs() < 1e-15);
        assert_eq!(r.ece, ece(&four_samples(), 2).unwrap().ece);

        let exact: Vec<_> = [(9, true), (8, false), (3, false), (2, true)]
            .iter()
            .map(|&(c, ok)| PredictionSample::new(Exact::new(c, 10), ok))
            .collect();
        assert_eq!(ece(&exact, 2).unwrap().ece, Exact::new(3, 10));
    }

    #[test]
    fn boundary_goes_up() {
        let r = ece(&[PredictionSample::new(0.5f64, true)], 2).unwrap();
        assert_eq!(r.bins[1].count, 1);
        let r = ece(&[PredictionSample::new(1.0f64, true)], 4).unwrap();
        assert_eq!(r.bins[3].count, 1);
        let r = ece(&[PredictionSample::new(0.0f64, false)], 4).unwrap();
        assert_eq!(r.bins[0].count, 1);
    }

    #[test]
    fn singleton() {
        let r = ece(&[PredictionSample::new(0.7f64, false)], 10).unwrap();
        assert_eq!(r.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(r.ece, 0.7);
    }

    #[test]
    fn ece_errors() {
        assert_eq!(ece::<f64>(&[], 10).unwrap_err(), MetricsError::EmptySamples);
        assert_eq!(ece(&four_samples(), 0).unwrap_err(), MetricsError::ZeroBins);
        assert_eq!(
            ece(&[PredictionSample::new(1.5f64, true)], 3).unwrap_err(),
            MetricsError::ConfidenceOutOfRange(0)
        );
    }

    #[test]
    fn report_text() {
        let text = ece(&four_samples(), 2).unwrap().to_text();
        assert!(text.starts_with("bins = 2\nsamples = 4\nece = "));
        assert_eq!(text.lines().count(), 6);
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_identity_and_empty() {
        let r = vec![toks("the cat sat on the mat")];
        assert_eq!(bleu(&r, &r, 4).unwrap(), 1.0);
        let empty: Vec<Vec<&str>> = vec![vec![]];
        assert_eq!(bleu(&empty, &r, 4).unwrap(), 0.0);
        assert!(matches!(
            bleu(&r, &[toks("a"), toks("b")], 4),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(bleu(&r, &empty, 4).unwrap_err(), MetricsError::EmptyReferences);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let h = vec![toks("a b c d")];
        let r = vec![toks("a b c d e f g h")];
        let expected = (1.0f64 - 2.0).exp();
        assert!((bleu(&h, &r, 4).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn chrf_identity_and_disjoint() {
        let r = ["hello world", "foo"];
        assert_eq!(chrf(&r, &r, 6, 2.0).unwrap(), 1.0);
        assert_eq!(chrf(&["abc"], &["xyz"], 6, 2.0).unwrap(), 0.0);
        assert_eq!(chrf(&["a b"], &["ab"], 6, 2.0).unwrap(), 1.0);
        assert_eq!(chrf(&["ab"], &["ab"], 6, 2.0).unwrap(), 1.0);
    }
}
