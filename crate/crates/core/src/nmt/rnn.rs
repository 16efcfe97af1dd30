//! Stacked LSTM encoder-decoder with optional global (additive) or local
//! (multiplicative, windowed) attention. The decoder stack does not consume
//! attention output, so it runs layer by layer like the encoder.

use std::sync::Arc;

use rand::Rng;

use super::{last_row_log_probs, param, record, AttentionKind, Memory, Model, ModelConfig, NmtError, Trace};
use crate::autodiff::{AutodiffError, ParamSet, Tape, Tensor, Var};
use crate::Scalar;

const INIT: f64 = 0.08;

/// Per-layer `(h, c)` after the last consumed token, with the resulting
/// next-token log-probabilities.
#[derive(Debug, Clone)]
pub struct RnnState<T> {
    memory: Arc<Memory<T>>,
    layers: Vec<(Vec<T>, Vec<T>)>,
    log_probs: Arc<Vec<f64>>,
}

fn encoder_input_dim(c: &ModelConfig, layer: usize) -> usize {
    match layer {
        0 => c.embed_dim,
        1 if c.bidirectional_first => 2 * c.hidden_units,
        _ => c.hidden_units,
    }
}

fn memory_dim(c: &ModelConfig) -> usize {
    if c.bidirectional_first && c.num_layers == 1 {
        2 * c.hidden_units
    } else {
        c.hidden_units
    }
}

fn residual(c: &ModelConfig, layer: usize, input_dim: usize) -> bool {
    c.residual_from_layer.is_some_and(|r| layer + 1 >= r) && input_dim == c.hidden_units
}

pub(super) fn init<T: Scalar, R: Rng>(
    c: &ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
    rng: &mut R,
    ps: &mut ParamSet<T>,
) -> Result<(), NmtError> {
    let h = c.hidden_units;
    // Unit-variance embeddings: at the weight scale, token identity is lost
    // under the gate biases and the top encoder layer saturates to the same
    // state at every position.
    ps.add("enc.emb", Tensor::normal(vec![src_vocab, c.embed_dim], 1.0, rng))?;
    ps.add("dec.emb", Tensor::normal(vec![tgt_vocab, c.embed_dim], 1.0, rng))?;
    let mut add = |name: String, shape: Vec<usize>| ps.add(&name, Tensor::uniform(shape, INIT, rng)).map(|_| ());
    for l in 0..c.num_layers {
        let din = encoder_input_dim(c, l);
        let dirs: &[&str] = if l == 0 && c.bidirectional_first { &["fw.", "bw."] } else { &[""] };
        for d in dirs {
            add(format!("enc.l{l}.{d}wx"), vec![din, 4 * h])?;
            add(format!("enc.l{l}.{d}wh"), vec![h, 4 * h])?;
            add(format!("enc.l{l}.{d}b"), vec![1, 4 * h])?;
        }
        let din = if l == 0 { c.embed_dim } else { h };
        add(format!("dec.l{l}.wx"), vec![din, 4 * h])?;
        add(format!("dec.l{l}.wh"), vec![h, 4 * h])?;
        add(format!("dec.l{l}.b"), vec![1, 4 * h])?;
    }
    let m = memory_dim(c);
    match c.attention {
        AttentionKind::None => {}
        AttentionKind::GlobalAdditive => {
            add("att.w1".into(), vec![h, h])?;
            add("att.w2".into(), vec![m, h])?;
            add("att.v".into(), vec![1, h])?;
        }
        AttentionKind::LocalMultiplicative => {
            add("att.wa".into(), vec![h, m])?;
            add("att.wp".into(), vec![h, h])?;
            add("att.vp".into(), vec![h, 1])?;
        }
    }
    if c.attention != AttentionKind::None {
        add("att.wc".into(), vec![m + h, h])?;
    }
    add("out.w".into(), vec![h, tgt_vocab])?;
    add("out.b".into(), vec![1, tgt_vocab])?;
    Ok(())
}

struct Cell {
    wh: Var,
    h: Var,
    c: Var,
}

impl Cell {
    /// One LSTM step from a precomputed `x Wx + b` row; gates ordered i, f, g, o.
    fn step<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, xw: Var) -> Result<Var, AutodiffError> {
        let n = tape.shape(self.h).1;
        let hw = tape.matmul(self.h, self.wh)?;
        let z = tape.add(xw, hw)?;
        let i = tape.slice_cols(z, 0, n)?;
        let f = tape.slice_cols(z, n, n)?;
        let g = tape.slice_cols(z, 2 * n, n)?;
        let o = tape.slice_cols(z, 3 * n, n)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, self.c)?;
        let write = tape.mul(i, g)?;
        self.c = tape.add(keep, write)?;
        let tc = tape.tanh(self.c);
        self.h = tape.mul(o, tc)?;
        Ok(self.h)
    }
}

/// Runs one direction of one layer over `x: (T, d_in)`. Returns the
/// per-position outputs in input order and the final `(h, c)`.
fn run_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    prefix: &str,
    init: Option<(Var, Var)>,
    reverse: bool,
) -> Result<(Var, (Var, Var)), AutodiffError> {
    let wx = param(tape, &format!("{prefix}wx"))?;
    let wh = param(tape, &format!("{prefix}wh"))?;
    let b = param(tape, &format!("{prefix}b"))?;
    let xw = tape.matmul(x, wx)?;
    let xw = tape.add_row(xw, b)?;
    let n = tape.shape(wh).0;
    let (h, c) = match init {
        Some(s) => s,
        None => (tape.zeros(1, n), tape.zeros(1, n)),
    };
    let mut cell = Cell { wh, h, c };
    let len = tape.shape(x).0;
    let mut outs = Vec::with_capacity(len);
    for k in 0..len {
        let t = if reverse { len - 1 - k } else { k };
        let row = tape.slice_rows(xw, t, 1)?;
        outs.push(cell.step(tape, row)?);
    }
    if reverse {
        outs.reverse();
    }
    Ok((tape.concat_rows(&outs)?, (cell.h, cell.c)))
}

struct Encoded {
    memory: Var,
    finals: Vec<(Var, Var)>,
}

fn encode<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    src: &[usize],
    trace: &mut Option<&mut Trace>,
) -> Result<Encoded, AutodiffError> {
    let c = &m.config;
    let emb = param(tape, "enc.emb")?;
    let mut x = tape.gather(emb, src)?;
    let mut finals = Vec::with_capacity(c.num_layers);
    for l in 0..c.num_layers {
        x = tape.dropout(x, c.dropout);
        let din = tape.shape(x).1;
        let out = if l == 0 && c.bidirectional_first {
            let (fw, (hf, cf)) = run_layer(tape, x, "enc.l0.fw.", None, false)?;
            let (bw, (hb, cb)) = run_layer(tape, x, "enc.l0.bw.", None, true)?;
            finals.push((tape.add(hf, hb)?, tape.add(cf, cb)?));
            tape.concat_cols(&[fw, bw])?
        } else {
            let (out, fin) = run_layer(tape, x, &format!("enc.l{l}."), None, false)?;
            finals.push(fin);
            if residual(c, l, din) {
                tape.add(out, x)?
            } else {
                out
            }
        };
        record(trace, |t| t.encoder_layers.push(tape.value(out).iter().map(|v| v.as_f64()).collect()));
        x = out;
    }
    Ok(Encoded { memory: x, finals })
}

/// Runs the decoder stack over `x` (embedded inputs) from `states`, which
/// are replaced by the final states.
fn decode_stack<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    mut x: Var,
    states: &mut [(Var, Var)],
) -> Result<Var, AutodiffError> {
    let c = &m.config;
    for (l, state) in states.iter_mut().enumerate() {
        x = tape.dropout(x, c.dropout);
        let din = tape.shape(x).1;
        let (out, fin) = run_layer(tape, x, &format!("dec.l{l}."), Some(*state), false)?;
        *state = fin;
        x = if residual(c, l, din) { tape.add(out, x)? } else { out };
    }
    Ok(x)
}

/// Attention over `memory` for each row of `top: (T_tgt, h)`; returns the
/// attentional hidden states `tanh([c; h] Wc)` or `top` when disabled.
fn attend<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    memory: Var,
    top: Var,
    trace: &mut Option<&mut Trace>,
) -> Result<Var, AutodiffError> {
    let c = &m.config;
    let (steps, _) = tape.shape(top);
    let src_len = tape.shape(memory).0;
    let weights = match c.attention {
        AttentionKind::None => return Ok(top),
        AttentionKind::GlobalAdditive => {
            let w1 = param(tape, "att.w1")?;
            let w2 = param(tape, "att.w2")?;
            let v = param(tape, "att.v")?;
            let keys = tape.matmul(memory, w2)?;
            let q = tape.matmul(top, w1)?;
            let mut rows = Vec::with_capacity(steps);
            for t in 0..steps {
                let qt = tape.slice_rows(q, t, 1)?;
                let e = tape.add_row(keys, qt)?;
                let e = tape.tanh(e);
                rows.push(tape.matmul_t(v, e)?);
            }
            let scores = tape.concat_rows(&rows)?;
            tape.softmax(scores)
        }
        AttentionKind::LocalMultiplicative => {
            let wa = param(tape, "att.wa")?;
            let wp = param(tape, "att.wp")?;
            let vp = param(tape, "att.vp")?;
            let q = tape.matmul(top, wa)?;
            let scores = tape.matmul_t(q, memory)?;
            // p_t = S·σ(v_pᵀ tanh(W_p h_t)) ∈ [0, S]
            let hp = tape.matmul(top, wp)?;
            let hp = tape.tanh(hp);
            let p = tape.matmul(hp, vp)?;
            let p = tape.sigmoid(p);
            let p = tape.scale(p, T::of(src_len as f64));
            let ones = tape.constant(1, src_len, vec![T::one(); src_len])?;
            let p_mat = tape.matmul(p, ones)?;
            let pos: Vec<T> = (0..steps).flat_map(|_| (0..src_len).map(|s| T::of(s as f64))).collect();
            let pos = tape.constant(steps, src_len, pos)?;
            let diff = tape.sub(pos, p_mat)?;
            let window = c.local_window as f64;
            let mask: Vec<bool> = tape.value(diff).iter().map(|d| d.as_f64().abs() > window).collect();
            let sq = tape.mul(diff, diff)?;
            let sigma = window / 2.0;
            let gauss = tape.scale(sq, T::of(-1.0 / (2.0 * sigma * sigma)));
            let scores = tape.add(scores, gauss)?;
            let scores = tape.mask_fill(scores, &mask)?;
            tape.softmax(scores)
        }
    };
    record(trace, |tr| {
        let w = tape.value(weights);
        tr.attention.extend(w.chunks(src_len).map(|r| r.iter().map(|v| v.as_f64()).collect()));
    });
    let ctx = tape.matmul(weights, memory)?;
    let cat = tape.concat_cols(&[ctx, top])?;
    let wc = param(tape, "att.wc")?;
    let ht = tape.matmul(cat, wc)?;
    Ok(tape.tanh(ht))
}

fn project<T: Scalar>(m: &Model<T>, tape: &mut Tape<'_, T>, h: Var) -> Result<Var, AutodiffError> {
    let h = tape.dropout(h, m.config.dropout);
    super::linear(tape, h, "out")
}

pub(super) fn logits<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    src: &[usize],
    tgt_in: &[usize],
    mut trace: Option<&mut Trace>,
) -> Result<Var, AutodiffError> {
    let enc = encode(m, tape, src, &mut trace)?;
    let emb = param(tape, "dec.emb")?;
    let x = tape.gather(emb, tgt_in)?;
    let mut states = enc.finals;
    let top = decode_stack(m, tape, x, &mut states)?;
    let h = attend(m, tape, enc.memory, top, &mut trace)?;
    project(m, tape, h)
}

fn values<T: Scalar>(tape: &Tape<'_, T>, v: Var) -> Vec<T> {
    tape.value(v).to_vec()
}

/// Feeds `token` from the given states and returns the new states and the
/// next-token log-probabilities.
fn feed<T: Scalar>(
    m: &Model<T>,
    memory: &Memory<T>,
    layers: &[(Vec<T>, Vec<T>)],
    token: usize,
) -> Result<(Vec<(Vec<T>, Vec<T>)>, Vec<f64>), NmtError> {
    if token >= m.tgt_vocab {
        return Err(AutodiffError::IndexOutOfRange { index: token, len: m.tgt_vocab }.into());
    }
    let mut tape = Tape::new(&m.params, 0);
    let (mem, _) = memory.load(&mut tape)?;
    let n = m.config.hidden_units;
    let mut states = Vec::with_capacity(layers.len());
    for (h, c) in layers {
        states.push((tape.constant(1, n, h.clone())?, tape.constant(1, n, c.clone())?));
    }
    let emb = param(&mut tape, "dec.emb")?;
    let x = tape.gather(emb, &[token])?;
    let top = decode_stack(m, &mut tape, x, &mut states)?;
    let h = attend(m, &mut tape, mem, top, &mut None)?;
    let logits = project(m, &mut tape, h)?;
    let lp = last_row_log_probs(&mut tape, logits)?;
    let out = states.iter().map(|&(h, c)| (values(&tape, h), values(&tape, c))).collect();
    Ok((out, lp))
}

pub(super) fn start<T: Scalar>(m: &Model<T>, src: &[usize]) -> Result<RnnState<T>, NmtError> {
    let mut tape = Tape::new(&m.params, 0);
    let enc = encode(m, &mut tape, src, &mut None)?;
    let memory = Memory::from_tape(&tape, enc.memory, None);
    let layers: Vec<_> = enc.finals.iter().map(|&(h, c)| (values(&tape, h), values(&tape, c))).collect();
    drop(tape);
    let (layers, lp) = feed(m, &memory, &layers, crate::corpus::BOS)?;
    Ok(RnnState { memory: Arc::new(memory), layers, log_probs: Arc::new(lp) })
}

pub(super) fn step<T: Scalar>(_m: &Model<T>, s: &RnnState<T>) -> Result<Vec<f64>, NmtError> {
    Ok(s.log_probs.as_ref().clone())
}

pub(super) fn advance<T: Scalar>(m: &Model<T>, s: &RnnState<T>, token: usize) -> Result<RnnState<T>, NmtError> {
    let (layers, lp) = feed(m, &s.memory, &s.layers, token)?;
    Ok(RnnState { memory: s.memory.clone(), layers, log_probs: Arc::new(lp) })
}
