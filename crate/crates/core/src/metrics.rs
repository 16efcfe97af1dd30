//! Corpus BLEU, perplexity, exact-match accuracy and token F1.
//!
//! All corpus reductions run in input order so reports are bit-reproducible.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("corpus length mismatch: {candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("empty corpus")]
    Empty,
    #[error("invalid BLEU parameters: {0}")]
    InvalidParams(String),
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotADistribution { row: usize, sum: f64 },
    #[error("target index {index} out of range in row {row}")]
    TargetOutOfRange { row: usize, index: usize },
}

/// Maximum n-gram order and the weights of the geometric mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuParams {
    weights: Vec<f64>,
    /// Add-one smoothing of the n ≥ 2 precisions. Off by default.
    pub smoothing: bool,
}

impl Default for BleuParams {
    fn default() -> Self {
        Self::uniform(4).expect("N = 4 is valid")
    }
}

impl BleuParams {
    pub fn uniform(max_n: usize) -> Result<Self, MetricsError> {
        if max_n == 0 {
            return Err(MetricsError::InvalidParams("N must be at least 1".into()));
        }
        Ok(Self { weights: vec![1.0 / max_n as f64; max_n], smoothing: false })
    }

    pub fn with_weights(weights: Vec<f64>) -> Result<Self, MetricsError> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(MetricsError::InvalidParams("weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MetricsError::InvalidParams(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { weights, smoothing: false })
    }

    pub fn max_n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Score in `[0, 1]`.
    pub bleu: f64,
    pub bp: f64,
    pub precisions: Vec<f64>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuReport {
    /// The score on the conventional 0–100 scale.
    pub fn percent(&self) -> f64 {
        self.bleu * 100.0
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and total candidate n-grams for one candidate
/// against any number of references.
pub fn clipped_matches<T: Eq + Hash>(candidate: &[T], references: &[&[T]], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in references {
        for (gram, count) in ngram_counts(r, n) {
            let e = max_ref.entry(gram).or_insert(0);
            *e = (*e).max(count);
        }
    }
    let matched = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    let total = if n > 0 && candidate.len() >= n { candidate.len() - n + 1 } else { 0 };
    (matched, total)
}

fn check_aligned<A, B>(a: &[A], b: &[B]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { candidates: a.len(), references: b.len() });
    }
    Ok(())
}

/// Corpus-level modified n-gram precision: clipped matches summed over the
/// corpus divided by the summed candidate n-gram counts (0 when there are no
/// candidate n-grams).
pub fn modified_precision<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    n: usize,
) -> Result<f64, MetricsError> {
    check_aligned(candidates, references)?;
    let (mut m, mut d) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let (mm, dd) = clipped_matches(c, &[r.as_slice()], n);
        m += mm;
        d += dd;
    }
    Ok(if d == 0 { 0.0 } else { m as f64 / d as f64 })
}

/// `1` if the candidate corpus is longer than the reference corpus, else
/// `exp(1 - r/c)`; `0` for an empty candidate corpus.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

pub fn bleu<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    params: &BleuParams,
) -> Result<BleuReport, MetricsError> {
    check_aligned(candidates, references)?;
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    let max_n = params.max_n();
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        c += cand.len();
        r += reference.len();
        for n in 1..=max_n {
            let (m, d) = clipped_matches(cand, &[reference.as_slice()], n);
            matched[n - 1] += m;
            total[n - 1] += d;
        }
    }
    let precisions: Vec<f64> = (0..max_n)
        .map(|i| {
            if params.smoothing && i > 0 {
                (matched[i] + 1) as f64 / (total[i] + 1) as f64
            } else if total[i] == 0 {
                0.0
            } else {
                matched[i] as f64 / total[i] as f64
            }
        })
        .collect();
    let bp = brevity_penalty(c, r);
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean: f64 = params.weights().iter().zip(&precisions).map(|(w, p)| w * p.ln()).sum();
        bp * log_mean.exp()
    };
    Ok(BleuReport { bleu, bp, precisions, candidate_len: c, reference_len: r })
}

/// Clamp applied to zero target probabilities in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    /// Mean cross-entropy in bits.
    pub bits: f64,
    /// Rows whose target probability was zero and got clamped.
    pub clamped: usize,
}

/// Mean of `-log2 q(target)` over rows. `targets[i]` is the index of the
/// one-hot entry of row `i`.
pub fn cross_entropy(targets: &[usize], probs: &[Vec<f64>]) -> Result<CrossEntropy, MetricsError> {
    check_aligned(targets, probs)?;
    if targets.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (row, (&t, q)) in targets.iter().zip(probs).enumerate() {
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MetricsError::NotADistribution { row, sum });
        }
        let p = *q.get(t).ok_or(MetricsError::TargetOutOfRange { row, index: t })?;
        let p = if p <= 0.0 {
            clamped += 1;
            PROB_FLOOR
        } else {
            p
        };
        total -= p.log2();
    }
    if clamped > 0 {
        log::warn!("{clamped} zero-probability targets clamped to {PROB_FLOOR}");
    }
    Ok(CrossEntropy { bits: total / targets.len() as f64, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityReport {
    /// Cross-entropy in bits.
    pub h: f64,
    pub ppl: f64,
}

impl PerplexityReport {
    pub fn from_bits(h: f64) -> Self {
        Self { h, ppl: perplexity(h) }
    }

    /// From a natural-log loss, as produced by training.
    pub fn from_nats(nats: f64) -> Self {
        Self::from_bits(nats / std::f64::consts::LN_2)
    }
}

pub fn perplexity(h_bits: f64) -> f64 {
    h_bits.exp2()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub accuracy: f64,
    pub flags: Vec<bool>,
    pub f1_mean: f64,
    pub f1: Vec<f64>,
}

/// Multiset token F1. Two empty sequences score 1.
pub fn token_f1<T: Eq + Hash>(candidate: &[T], target: &[T]) -> f64 {
    if candidate.is_empty() && target.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&T, isize> = HashMap::new();
    for t in target {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut m = 0usize;
    for c in candidate {
        if let Some(n) = counts.get_mut(c) {
            if *n > 0 {
                *n -= 1;
                m += 1;
            }
        }
    }
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / target.len() as f64;
    2.0 * p * r / (p + r)
}

/// Order-sensitive exact match of token sequences plus per-pair token F1.
pub fn exact_match<T: Eq + Hash>(candidates: &[Vec<T>], targets: &[Vec<T>]) -> Result<MatchReport, MetricsError> {
    check_aligned(candidates, targets)?;
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    let flags: Vec<bool> = candidates.iter().zip(targets).map(|(c, t)| c == t).collect();
    let f1: Vec<f64> = candidates.iter().zip(targets).map(|(c, t)| token_f1(c, t)).collect();
    let n = candidates.len() as f64;
    Ok(MatchReport {
        accuracy: flags.iter().filter(|&&f| f).count() as f64 / n,
        f1_mean: f1.iter().sum::<f64>() / n,
        flags,
        f1,
    })
}
