//! Encoder-decoder translators built on the tape: stacked LSTMs with
//! optional attention, convolutional blocks with gated linear units, and a
//! transformer. Training uses teacher forcing; decoding uses beam search.

mod beam;
mod checkpoint;
mod config;
mod conv;
mod rnn;
mod train;
mod transformer;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamSet, Tape, Var};
use crate::codec::CodecError;
use crate::corpus::{CorpusError, BOS, EOS, PAD};
use crate::metrics::MetricsError;
use crate::Scalar;

pub use beam::{beam_search, greedy, Hypothesis, StepModel};
pub use checkpoint::{evaluate, translate, Checkpoint, EvalReport, Translation};
pub use config::{parse_conv_layout, Architecture, AttentionKind, ConvLayer, ModelConfig, OptimizerKind, PRESETS, STEPS_PER_EPOCH};
pub use train::{encode_pairs, train, CONVERGED_LOSS, EpochStats, Example, StopReason, TrainOptions, TrainReport};

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("empty {0} set")]
    EmptyDataset(&'static str),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("sequence of {len} exceeds the {max} supported positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A translator: hyperparameters plus weights for given vocabulary sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

/// Decoder state between beam-search steps.
#[derive(Debug, Clone)]
pub enum DecodeState<T> {
    Rnn(rnn::RnnState<T>),
    /// Conv and transformer decoders rerun over the whole prefix.
    Prefix { memory: Arc<Memory<T>>, prefix: Vec<usize> },
}

/// Encoder output kept as plain values between decoding steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
    /// Attention values when they differ from `data` (conv: `z + e`).
    pub values: Option<Vec<T>>,
}

impl<T: Scalar> Memory<T> {
    fn from_tape(tape: &Tape<'_, T>, v: Var, values: Option<Var>) -> Self {
        let (rows, cols) = tape.shape(v);
        Self { rows, cols, data: tape.value(v).to_vec(), values: values.map(|x| tape.value(x).to_vec()) }
    }

    fn load(&self, tape: &mut Tape<'_, T>) -> Result<(Var, Var), AutodiffError> {
        let k = tape.constant(self.rows, self.cols, self.data.clone())?;
        let v = match &self.values {
            Some(vals) => tape.constant(self.rows, vals.len() / self.rows.max(1), vals.clone())?,
            None => k,
        };
        Ok((k, v))
    }
}

/// Values recorded during a forward pass for inspection in tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// Attention weights per decoder step (rnn) or per layer (conv).
    pub attention: Vec<Vec<f64>>,
    /// Encoder layer outputs, bottom to top.
    pub encoder_layers: Vec<Vec<f64>>,
}

pub(crate) fn param<T: Scalar>(tape: &mut Tape<'_, T>, name: &str) -> Result<Var, AutodiffError> {
    tape.param_named(name)
}

pub(crate) fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, prefix: &str) -> Result<Var, AutodiffError> {
    let w = param(tape, &format!("{prefix}.w"))?;
    let b = param(tape, &format!("{prefix}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn record(trace: &mut Option<&mut Trace>, f: impl FnOnce(&mut Trace)) {
    if let Some(t) = trace.as_deref_mut() {
        f(t);
    }
}

/// Log-softmax of the last row of `logits`, as `f64`.
fn last_row_log_probs<T: Scalar>(tape: &mut Tape<'_, T>, logits: Var) -> Result<Vec<f64>, AutodiffError> {
    let (r, _) = tape.shape(logits);
    let last = tape.slice_rows(logits, r - 1, 1)?;
    let lp = tape.log_softmax(last);
    Ok(tape.value(lp).iter().map(|x| x.as_f64()).collect())
}

impl<T: Scalar> Model<T> {
    /// Fresh weights drawn from the config seed.
    pub fn new(config: ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Result<Self, NmtError> {
        config.validate()?;
        if src_vocab <= EOS || tgt_vocab <= EOS {
            return Err(NmtError::Config("vocabularies must include the reserved tokens".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        match config.architecture {
            Architecture::Rnn => rnn::init(&config, src_vocab, tgt_vocab, &mut rng, &mut params)?,
            Architecture::Conv => conv::init(&config, src_vocab, tgt_vocab, &mut rng, &mut params)?,
            Architecture::Transformer => transformer::init(&config, src_vocab, tgt_vocab, &mut rng, &mut params)?,
        }
        Ok(Self { config, params, src_vocab, tgt_vocab })
    }

    fn check_ids(&self, src: &[usize], tgt: &[usize]) -> Result<(), NmtError> {
        if src.is_empty() {
            return Err(NmtError::EmptyDataset("source token"));
        }
        for (ids, v) in [(src, self.src_vocab), (tgt, self.tgt_vocab)] {
            if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
                return Err(AutodiffError::IndexOutOfRange { index: bad, len: v }.into());
            }
        }
        if self.config.architecture != Architecture::Rnn {
            let max = self.config.max_positions;
            for len in [src.len(), tgt.len()] {
                if len > max {
                    return Err(NmtError::SequenceTooLong { len, max });
                }
            }
        }
        Ok(())
    }

    /// Teacher-forced logits `(len(tgt_in), |V_tgt|)`. Source positions at
    /// or beyond `src_valid` are masked out of attention (transformer only).
    pub fn logits(
        &self,
        tape: &mut Tape<'_, T>,
        src: &[usize],
        tgt_in: &[usize],
        src_valid: Option<usize>,
        trace: Option<&mut Trace>,
    ) -> Result<Var, NmtError> {
        self.check_ids(src, tgt_in)?;
        Ok(match self.config.architecture {
            Architecture::Rnn => rnn::logits(self, tape, src, tgt_in, trace)?,
            Architecture::Conv => conv::logits(self, tape, src, tgt_in, trace)?,
            Architecture::Transformer => transformer::logits(self, tape, src, tgt_in, src_valid)?,
        })
    }

    /// Mean token cross-entropy (nats) of `tgt` followed by `</s>`.
    pub fn loss(&self, tape: &mut Tape<'_, T>, src: &[usize], tgt: &[usize]) -> Result<Var, NmtError> {
        let (tgt_in, tgt_out) = shift(tgt);
        let logits = self.logits(tape, src, &tgt_in, None, None)?;
        Ok(tape.cross_entropy(logits, &tgt_out, PAD)?)
    }

    /// Summed negative log-likelihood in nats and the number of scored
    /// tokens, without dropout.
    pub fn nll(&self, src: &[usize], tgt: &[usize]) -> Result<(f64, usize), NmtError> {
        let mut tape = Tape::new(&self.params, 0);
        let loss = self.loss(&mut tape, src, tgt)?;
        let n = tgt.len() + 1;
        Ok((tape.scalar(loss).as_f64() * n as f64, n))
    }

    pub fn trace(&self, src: &[usize], tgt: &[usize]) -> Result<Trace, NmtError> {
        let mut tape = Tape::new(&self.params, 0);
        let mut trace = Trace::default();
        let (tgt_in, _) = shift(tgt);
        self.logits(&mut tape, src, &tgt_in, None, Some(&mut trace))?;
        Ok(trace)
    }
}

/// `([<s>] + tgt, tgt + [</s>])`
pub fn shift(tgt: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut tgt_in = Vec::with_capacity(tgt.len() + 1);
    tgt_in.push(BOS);
    tgt_in.extend_from_slice(tgt);
    let mut tgt_out = tgt.to_vec();
    tgt_out.push(EOS);
    (tgt_in, tgt_out)
}

impl<T: Scalar> StepModel for Model<T> {
    type State = DecodeState<T>;

    fn start(&self, src: &[usize]) -> Result<Self::State, NmtError> {
        self.check_ids(src, &[])?;
        match self.config.architecture {
            Architecture::Rnn => Ok(DecodeState::Rnn(rnn::start(self, src)?)),
            Architecture::Conv => {
                Ok(DecodeState::Prefix { memory: Arc::new(conv::encode_memory(self, src)?), prefix: vec![BOS] })
            }
            Architecture::Transformer => {
                Ok(DecodeState::Prefix { memory: Arc::new(transformer::encode_memory(self, src)?), prefix: vec![BOS] })
            }
        }
    }

    fn step(&self, state: &Self::State) -> Result<Vec<f64>, NmtError> {
        match state {
            DecodeState::Rnn(s) => rnn::step(self, s),
            DecodeState::Prefix { memory, prefix } => {
                if prefix.len() > self.config.max_positions {
                    return Err(NmtError::SequenceTooLong { len: prefix.len(), max: self.config.max_positions });
                }
                let mut tape = Tape::new(&self.params, 0);
                let logits = match self.config.architecture {
                    Architecture::Conv => conv::decode_logits(self, &mut tape, memory, prefix)?,
                    _ => transformer::decode_logits(self, &mut tape, memory, prefix)?,
                };
                Ok(last_row_log_probs(&mut tape, logits)?)
            }
        }
    }

    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State, NmtError> {
        match state {
            DecodeState::Rnn(s) => Ok(DecodeState::Rnn(rnn::advance(self, s, token)?)),
            DecodeState::Prefix { memory, prefix } => {
                let mut p = prefix.clone();
                p.push(token);
                Ok(DecodeState::Prefix { memory: memory.clone(), prefix: p })
            }
        }
    }
}
