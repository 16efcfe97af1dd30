//! Length-normalized beam search and greedy decoding over any
//! [`StepModel`].

use std::cmp::Ordering;

use super::NmtError;
use crate::corpus::{BOS, EOS, PAD, UNK};

/// `<unk>` may only win when every other token is below this probability.
const UNK_FLOOR: f64 = 1e-9;

/// An autoregressive next-token distribution.
pub trait StepModel {
    type State: Clone;

    /// Encodes the source; the state has consumed `<s>`.
    fn start(&self, src: &[usize]) -> Result<Self::State, NmtError>;

    /// Log-probabilities of the next token, one per target-vocabulary id.
    fn step(&self, state: &Self::State) -> Result<Vec<f64>, NmtError>;

    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State, NmtError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, excluding `</s>`.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, including `</s>` when finished.
    pub log_prob: f64,
    /// False when decoding stopped at `max_len` before `</s>`.
    pub finished: bool,
}

impl Hypothesis {
    /// `log_prob / length`, counting `</s>` when finished.
    pub fn score(&self) -> f64 {
        let len = self.tokens.len() + usize::from(self.finished);
        if len == 0 {
            self.log_prob
        } else {
            self.log_prob / len as f64
        }
    }
}

/// Ids eligible for emission: never `<pad>` or `<s>`; `<unk>` only when no
/// other token reaches [`UNK_FLOOR`].
fn allowed(log_probs: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    let floor = UNK_FLOOR.ln();
    let others = log_probs.iter().enumerate().any(|(i, &lp)| i != PAD && i != BOS && i != UNK && lp >= floor);
    log_probs
        .iter()
        .copied()
        .enumerate()
        .filter(move |&(i, _)| i != PAD && i != BOS && !(i == UNK && others))
}

pub fn greedy<M: StepModel>(model: &M, src: &[usize], max_len: usize) -> Result<Hypothesis, NmtError> {
    let mut state = model.start(src)?;
    let mut hyp = Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false };
    for step in 0..max_len {
        let lps = model.step(&state)?;
        let mut best: Option<(usize, f64)> = None;
        for (t, lp) in allowed(&lps) {
            if best.is_none_or(|(_, b)| lp > b) {
                best = Some((t, lp));
            }
        }
        let Some((t, lp)) = best else { break };
        hyp.log_prob += lp;
        if t == EOS {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(t);
        if step + 1 < max_len {
            state = model.advance(&state, t)?;
        }
    }
    Ok(hyp)
}

struct Candidate {
    total: f64,
    token_lp: f64,
    parent: usize,
    token: usize,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.total
        .total_cmp(&a.total)
        .then(b.token_lp.total_cmp(&a.token_lp))
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Keeps the `width` best expansions per step; hypotheses ending in `</s>`
/// leave the beam. Returns the finished hypothesis with the best
/// [`Hypothesis::score`], or the best unfinished one if none finished.
pub fn beam_search<M: StepModel>(model: &M, src: &[usize], width: usize, max_len: usize) -> Result<Hypothesis, NmtError> {
    if width == 0 {
        return Err(NmtError::Config("beam width must be positive".into()));
    }
    let mut alive = vec![(model.start(src)?, Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false })];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let mut cands = Vec::new();
        for (i, (state, hyp)) in alive.iter().enumerate() {
            let lps = model.step(state)?;
            cands.extend(allowed(&lps).map(|(t, lp)| Candidate { total: hyp.log_prob + lp, token_lp: lp, parent: i, token: t }));
        }
        cands.sort_by(rank);
        cands.truncate(width);
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let (state, hyp) = &alive[c.parent];
            let mut tokens = hyp.tokens.clone();
            if c.token == EOS {
                finished.push(Hypothesis { tokens, log_prob: c.total, finished: true });
                continue;
            }
            tokens.push(c.token);
            let state = if step + 1 < max_len { model.advance(state, c.token)? } else { state.clone() };
            next.push((state, Hypothesis { tokens, log_prob: c.total, finished: false }));
        }
        alive = next;
        if finished.len() >= width || alive.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() { alive.into_iter().map(|(_, h)| h).collect() } else { finished };
    let mut best: Option<Hypothesis> = None;
    for h in pool {
        if best.as_ref().is_none_or(|b| h.score() > b.score()) {
            best = Some(h);
        }
    }
    Ok(best.unwrap_or(Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Next-token distribution depends only on the prefix length.
    struct Table(Vec<Vec<f64>>);

    impl StepModel for Table {
        type State = usize;

        fn start(&self, _: &[usize]) -> Result<usize, NmtError> {
            Ok(0)
        }

        fn step(&self, s: &usize) -> Result<Vec<f64>, NmtError> {
            Ok(self.0[(*s).min(self.0.len() - 1)].iter().map(|p: &f64| p.ln()).collect())
        }

        fn advance(&self, s: &usize, _: usize) -> Result<usize, NmtError> {
            Ok(s + 1)
        }
    }

    #[test]
    fn unk_suppressed_unless_alone() {
        let lps = [0.0, 0.0, (0.3f64).ln(), (0.6f64).ln(), (0.1f64).ln()];
        let ids: Vec<usize> = allowed(&lps).map(|(i, _)| i).collect();
        assert_eq!(ids, [EOS, 4]);
        let lps = [0.0, 0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        assert!(allowed(&lps).any(|(i, _)| i == UNK));
    }

    #[test]
    fn max_len_one_is_unfinished() {
        let m = Table(vec![vec![0.0, 0.0, 0.1, 0.0, 0.9]]);
        for h in [greedy(&m, &[4], 1).unwrap(), beam_search(&m, &[4], 1, 1).unwrap()] {
            assert_eq!(h.tokens, [4]);
            assert!(!h.finished);
        }
        // A wider beam also sees `</s>` at step one; finished hypotheses win.
        let h = beam_search(&m, &[4], 3, 1).unwrap();
        assert_eq!((h.tokens.len(), h.finished), (0, true));
    }

    #[test]
    fn zero_width_rejected() {
        let m = Table(vec![vec![0.0, 0.0, 1.0, 0.0]]);
        assert!(beam_search(&m, &[4], 0, 3).is_err());
    }
}
