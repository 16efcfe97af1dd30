//! Minibatch teacher-forced training with per-epoch validation and
//! best-BLEU parameter selection.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{greedy, Model, NmtError, OptimizerKind};
use crate::autodiff::{Adam, Gradients, Optimizer, Sgd, Tape};
use crate::corpus::{tokenize_nl, ParallelCorpus, Vocabulary};
use crate::metrics::{bleu, exact_match, BleuParams, PerplexityReport};
use crate::Scalar;

/// Per-token validation loss (nats) below which a model that already
/// reproduces every validation target is considered converged.
pub const CONVERGED_LOSS: f64 = 1e-3;

/// A pair as vocabulary ids, without `<s>`/`</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Questions are tokenized; both sides map unknown tokens to `<unk>`.
pub fn encode_pairs(corpus: &ParallelCorpus, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<Example> {
    corpus
        .pairs
        .iter()
        .map(|p| Example {
            src: src_vocab.encode(&tokenize_nl(&p.question)),
            tgt: tgt_vocab.encode(&p.query_encoded.tokens),
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop after the first epoch that ends past this budget.
    pub time_limit: Option<Duration>,
    /// Validate on at most this many examples (all when `None`).
    pub max_validation: Option<usize>,
    /// Stop once validation BLEU (percent) reaches this value.
    pub target_bleu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    /// Validation exact match reached 1.0 with loss at most
    /// [`CONVERGED_LOSS`].
    Perfect,
    /// Validation BLEU reached [`TrainOptions::target_bleu`].
    Target,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example loss in nats.
    pub train_loss: f64,
    /// Token-weighted loss in nats.
    pub valid_loss: f64,
    pub valid_ppl: f64,
    /// Greedy-decode BLEU in percent.
    pub valid_bleu: f64,
    pub valid_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_bleu: f64,
    pub stop: StopReason,
}

impl TrainReport {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tvalid_loss\tvalid_ppl\tvalid_bleu\tvalid_accuracy";

    /// One row per epoch. Wall-clock time is left out so that reruns
    /// produce identical files.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
                e.epoch, e.train_loss, e.valid_loss, e.valid_ppl, e.valid_bleu, e.valid_accuracy
            );
        }
        s
    }

    /// The report with wall-clock times zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }
}

/// Batches of similar source length, in seeded random order.
fn batches(data: &[Example], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    idx.sort_by_key(|&i| data[i].src.len());
    let mut out: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    out.shuffle(rng);
    out
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

pub(super) struct Validation {
    pub loss: f64,
    pub bleu: f64,
    pub accuracy: f64,
}

pub(super) fn validate<T: Scalar>(model: &Model<T>, data: &[Example]) -> Result<Validation, NmtError> {
    let (mut nll, mut count) = (0.0, 0usize);
    let mut hyps = Vec::with_capacity(data.len());
    let mut refs = Vec::with_capacity(data.len());
    for ex in data {
        let (l, n) = model.nll(&ex.src, &ex.tgt)?;
        nll += l;
        count += n;
        hyps.push(greedy(model, &ex.src, model.config.max_len)?.tokens);
        refs.push(ex.tgt.clone());
    }
    let b = bleu(&hyps, &refs, &BleuParams::default())?;
    let m = exact_match(&hyps, &refs)?;
    Ok(Validation { loss: nll / count as f64, bleu: b.percent(), accuracy: m.accuracy })
}

fn optimizer<T: Scalar>(model: &Model<T>) -> Box<dyn Optimizer<T>> {
    match model.config.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd { lr: model.config.lr }),
        OptimizerKind::Adam => Box::new(Adam::<T>::new(model.config.lr)),
    }
}

/// Trains `model` in place. On return it holds the parameters of the epoch
/// with the highest validation BLEU, ties going to the lower validation
/// loss. Patience counts epochs without a strict BLEU improvement.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train: &[Example],
    valid: &[Example],
    opts: &TrainOptions,
) -> Result<TrainReport, NmtError> {
    if train.is_empty() {
        return Err(NmtError::EmptyDataset("training"));
    }
    if valid.is_empty() {
        return Err(NmtError::EmptyDataset("validation"));
    }
    let valid = &valid[..opts.max_validation.unwrap_or(valid.len()).min(valid.len()).max(1)];
    let cfg = model.config.clone();
    let mut opt = optimizer(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let started = Instant::now();
    let mut epochs = Vec::new();
    let (mut best_bleu, mut best_epoch, mut best_params) = (f64::NEG_INFINITY, 0, model.params.clone());
    let mut best_loss = f64::INFINITY;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut loss_sum = 0.0;
        for (b, batch) in batches(train, cfg.batch_size, &mut rng).into_iter().enumerate() {
            let mut grads = Gradients::new(&model.params);
            for &i in &batch {
                let ex = &train[i];
                let mut tape = Tape::new(&model.params, mix(cfg.seed, epoch as u64, (b * train.len() + i) as u64)).training(true);
                let loss = model.loss(&mut tape, &ex.src, &ex.tgt)?;
                let l = tape.scalar(loss).as_f64();
                if !l.is_finite() {
                    return Err(NmtError::Diverged { epoch, detail: format!("loss {l} on example {i}") });
                }
                loss_sum += l;
                grads.merge(&tape.backward(loss)?);
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            if !grads.is_finite() {
                return Err(NmtError::Diverged { epoch, detail: "non-finite gradient".into() });
            }
            if cfg.clip_norm > 0.0 {
                grads.clip_global_norm(cfg.clip_norm);
            }
            opt.step(&mut model.params, &grads);
        }
        let v = validate(model, valid)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_loss: v.loss,
            valid_ppl: PerplexityReport::from_nats(v.loss).ppl,
            valid_bleu: v.bleu,
            valid_accuracy: v.accuracy,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} valid {:.4} ppl {:.3} bleu {:.2} acc {:.3} ({:.1}s)",
            stats.train_loss,
            stats.valid_loss,
            stats.valid_ppl,
            stats.valid_bleu,
            stats.valid_accuracy,
            stats.seconds
        );
        epochs.push(stats);
        if v.bleu > best_bleu || (v.bleu == best_bleu && v.loss < best_loss) {
            if v.bleu > best_bleu {
                best_epoch = epoch;
            }
            (best_bleu, best_loss) = (v.bleu, v.loss);
            best_params.clone_from(&model.params);
        }
        if v.accuracy >= 1.0 && v.loss <= CONVERGED_LOSS {
            stop = StopReason::Perfect;
            break;
        }
        if opts.target_bleu.is_some_and(|t| v.bleu >= t) {
            stop = StopReason::Target;
            break;
        }
        if epoch - best_epoch >= cfg.patience {
            stop = StopReason::Patience;
            break;
        }
        if opts.time_limit.is_some_and(|t| started.elapsed() >= t) {
            stop = StopReason::TimeLimit;
            break;
        }
    }
    model.params = best_params;
    Ok(TrainReport { epochs, best_epoch, best_bleu, stop })
}
