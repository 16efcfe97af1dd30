use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, ParallelCorpus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    Ratio { train: f64, val: f64, test: f64 },
    Fixed { val: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

// Guards floor() against products like 0.1 * 30 = 2.9999999999999996.
const FLOOR_SLACK: f64 = 1e-9;

impl SplitSpec {
    pub fn ratio(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, CorpusError> {
        let spec = Self { mode: SplitMode::Ratio { train, val, test }, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fixed(val: usize, test: usize, seed: u64) -> Self {
        Self { mode: SplitMode::Fixed { val, test }, seed }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if let SplitMode::Ratio { train, val, test } = self.mode {
            if !(train > 0.0 && val > 0.0 && test > 0.0) {
                return Err(CorpusError::InvalidSplit("ratio fractions must be positive".into()));
            }
            if ((train + val + test) - 1.0).abs() > 1e-9 {
                return Err(CorpusError::InvalidSplit(format!("fractions sum to {}", train + val + test)));
            }
        }
        Ok(())
    }

    /// (train, validation, test) sizes for a corpus of `n` pairs.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), CorpusError> {
        self.validate()?;
        let (v, t) = match self.mode {
            SplitMode::Ratio { val, test, .. } => {
                let f = |x: f64| (x * n as f64 + FLOOR_SLACK).floor() as usize;
                (f(val), f(test))
            }
            SplitMode::Fixed { val, test } => {
                if val + test >= n {
                    return Err(CorpusError::TooSmall { needed: val + test + 1, available: n });
                }
                (val, test)
            }
        };
        Ok((n - v - t, v, t))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: ParallelCorpus,
    pub validation: ParallelCorpus,
    pub test: ParallelCorpus,
}

impl DatasetSplits {
    pub fn parts(&self) -> [(&'static str, &ParallelCorpus); 3] {
        [("train", &self.train), ("valid", &self.validation), ("test", &self.test)]
    }
}

/// Seeded shuffle, then validation, test and train taken in that order.
pub fn split(corpus: &ParallelCorpus, spec: &SplitSpec) -> Result<DatasetSplits, CorpusError> {
    let n = corpus.len();
    let (_, nv, nt) = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |idx: &[usize]| ParallelCorpus {
        pairs: idx.iter().map(|&i| corpus.pairs[i].clone()).collect(),
        provenance: corpus.provenance.clone(),
    };
    Ok(DatasetSplits {
        validation: take(&order[..nv]),
        test: take(&order[nv..nv + nt]),
        train: take(&order[nv + nt..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::EncodedQuery;
    use crate::corpus::QQPair;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(n: usize) -> ParallelCorpus {
        ParallelCorpus::new(
            (0..n)
                .map(|i| QQPair {
                    question: format!("q{i}"),
                    query_raw: None,
                    query_encoded: EncodedQuery::new(vec![format!("t{i}")]),
                })
                .collect(),
        )
    }

    fn sizes(s: &DatasetSplits) -> (usize, usize, usize) {
        (s.train.len(), s.validation.len(), s.test.len())
    }

    #[test]
    fn full_corpus_fixed_split() {
        let c = corpus(1000);
        assert_eq!(sizes(&split(&c, &SplitSpec::ratio(0.8, 0.1, 0.1, 1).unwrap()).unwrap()), (800, 100, 100));
        assert_eq!(sizes(&split(&c, &SplitSpec::ratio(0.5, 0.1, 0.4, 1).unwrap()).unwrap()), (500, 100, 400));
        assert_eq!(SplitSpec::fixed(100, 100, 0).sizes(14_788).unwrap(), (14_588, 100, 100));
        assert_eq!(SplitSpec::ratio(0.8, 0.1, 0.1, 0).unwrap().sizes(30).unwrap(), (24, 3, 3));
    }

    #[test]
    fn invalid_specs() {
        assert!(SplitSpec::ratio(0.8, 0.1, 0.2, 0).is_err());
        assert!(SplitSpec::ratio(0.9, 0.1, 0.0, 0).is_err());
        assert!(matches!(split(&corpus(10), &SplitSpec::fixed(5, 5, 0)), Err(CorpusError::TooSmall { .. })));
    }

    #[test]
    fn seeded() {
        let c = corpus(50);
        let a = split(&c, &SplitSpec::fixed(5, 5, 7)).unwrap();
        assert_eq!(a, split(&c, &SplitSpec::fixed(5, 5, 7)).unwrap());
        assert_ne!(a, split(&c, &SplitSpec::fixed(5, 5, 8)).unwrap());
    }

    proptest! {
        #[test]
        fn partition(n in 3usize..200, a in 1u32..98, b in 1u32..98, seed: u64) {
            prop_assume!(a + b < 100);
            let (val, test) = (f64::from(a) / 100.0, f64::from(b) / 100.0);
            let spec = SplitSpec::ratio(1.0 - val - test, val, test, seed).unwrap();
            let c = corpus(n);
            let s = split(&c, &spec).unwrap();
            let (tr, v, t) = sizes(&s);
            prop_assert_eq!(tr + v + t, n);
            prop_assert_eq!(v, (val * n as f64 + 1e-9).floor() as usize);
            prop_assert_eq!(t, (test * n as f64 + 1e-9).floor() as usize);
            let mut seen = HashSet::new();
            for (_, part) in s.parts() {
                for p in &part.pairs {
                    prop_assert!(seen.insert(p.question.clone()));
                }
            }
            prop_assert_eq!(seen.len(), n);
        }
    }
}
