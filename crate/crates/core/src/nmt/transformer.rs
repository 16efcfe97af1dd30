//! Post-norm transformer: sinusoidal positions, multi-head attention, ReLU
//! feed-forward sublayers.

use rand::Rng;

use super::conv::add_linear;
use super::{linear, param, Memory, Model, ModelConfig, NmtError};
use crate::autodiff::{AutodiffError, ParamSet, Tape, Tensor, Var};
use crate::Scalar;

const LN_EPS: f64 = 1e-5;

fn add_norm<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize) -> Result<(), NmtError> {
    ps.add(&format!("{name}.g"), Tensor::from_fn(vec![1, d], T::one))?;
    ps.add(&format!("{name}.b"), Tensor::zeros(vec![1, d]))?;
    Ok(())
}

/// The key projection has no bias: it would shift every score in a row
/// equally and never receive a gradient.
fn add_attention<T: Scalar, R: Rng>(ps: &mut ParamSet<T>, rng: &mut R, name: &str, d: usize) -> Result<(), NmtError> {
    for p in ["q", "v", "o"] {
        add_linear(ps, rng, &format!("{name}.{p}"), d, d)?;
    }
    ps.add(&format!("{name}.k.w"), Tensor::normal(vec![d, d], (1.0 / d as f64).sqrt(), rng))?;
    Ok(())
}

pub(super) fn init<T: Scalar, R: Rng>(
    c: &ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
    rng: &mut R,
    ps: &mut ParamSet<T>,
) -> Result<(), NmtError> {
    let d = c.hidden_units;
    let std = (1.0 / d as f64).sqrt();
    ps.add("enc.emb", Tensor::normal(vec![src_vocab, d], std, rng))?;
    ps.add("dec.emb", Tensor::normal(vec![tgt_vocab, d], std, rng))?;
    for l in 0..c.num_layers {
        for side in ["enc", "dec"] {
            let p = format!("{side}.l{l}");
            add_attention(ps, rng, &format!("{p}.self"), d)?;
            add_norm(ps, &format!("{p}.ln1"), d)?;
            if side == "dec" {
                add_attention(ps, rng, &format!("{p}.cross"), d)?;
                add_norm(ps, &format!("{p}.ln3"), d)?;
            }
            add_linear(ps, rng, &format!("{p}.ff1"), d, 4 * d)?;
            add_linear(ps, rng, &format!("{p}.ff2"), 4 * d, d)?;
            add_norm(ps, &format!("{p}.ln2"), d)?;
        }
    }
    add_linear(ps, rng, "out", d, tgt_vocab)?;
    Ok(())
}

/// `PE(t, 2i) = sin(t / 10000^(2i/d))`, `PE(t, 2i+1) = cos(…)`.
pub fn sinusoid<T: Scalar>(len: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * d);
    for t in 0..len {
        for i in 0..d {
            let angle = t as f64 / 10000f64.powf((i / 2 * 2) as f64 / d as f64);
            out.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

fn embed<T: Scalar>(m: &Model<T>, tape: &mut Tape<'_, T>, side: &str, ids: &[usize]) -> Result<Var, AutodiffError> {
    let d = m.config.hidden_units;
    let emb = param(tape, &format!("{side}.emb"))?;
    let x = tape.gather(emb, ids)?;
    let x = tape.scale(x, T::of((d as f64).sqrt()));
    let pe = tape.constant(ids.len(), d, sinusoid(ids.len(), d))?;
    let x = tape.add(x, pe)?;
    Ok(tape.dropout(x, m.config.dropout))
}

/// Multi-head attention of `q_in` rows over `kv_in` rows. `mask` has one
/// entry per `(query, key)` pair; `true` hides the key.
pub(super) fn multi_head<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    heads: usize,
    q_in: Var,
    kv_in: Var,
    mask: Option<&[bool]>,
) -> Result<Var, AutodiffError> {
    let q = linear(tape, q_in, &format!("{name}.q"))?;
    let kw = param(tape, &format!("{name}.k.w"))?;
    let k = tape.matmul(kv_in, kw)?;
    let v = linear(tape, kv_in, &format!("{name}.v"))?;
    let dh = tape.shape(q).1 / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        outs.push(tape.attention(qh, kh, vh, mask)?.0);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    linear(tape, cat, &format!("{name}.o"))
}

fn add_norm_op<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, sub: Var, name: &str, dropout: f64) -> Result<Var, AutodiffError> {
    let sub = tape.dropout(sub, dropout);
    let s = tape.add(x, sub)?;
    let g = param(tape, &format!("{name}.g"))?;
    let b = param(tape, &format!("{name}.b"))?;
    tape.layer_norm(s, g, b, LN_EPS)
}

fn ffn<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, name: &str) -> Result<Var, AutodiffError> {
    let h = linear(tape, x, &format!("{name}.ff1"))?;
    let h = tape.relu(h);
    linear(tape, h, &format!("{name}.ff2"))
}

fn key_mask(queries: usize, keys: usize, hidden: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    (0..queries).flat_map(|q| (0..keys).map(move |k| (q, k))).map(|(q, k)| hidden(q, k)).collect()
}

fn encode<T: Scalar>(m: &Model<T>, tape: &mut Tape<'_, T>, src: &[usize], valid: usize) -> Result<Var, AutodiffError> {
    let c = &m.config;
    let n = src.len();
    let mask = (valid < n).then(|| key_mask(n, n, |_, k| k >= valid));
    let mut x = embed(m, tape, "enc", src)?;
    for l in 0..c.num_layers {
        let p = format!("enc.l{l}");
        let a = multi_head(tape, &format!("{p}.self"), c.heads, x, x, mask.as_deref())?;
        x = add_norm_op(tape, x, a, &format!("{p}.ln1"), c.dropout)?;
        let f = ffn(tape, x, &p)?;
        x = add_norm_op(tape, x, f, &format!("{p}.ln2"), c.dropout)?;
    }
    Ok(x)
}

fn decode<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    memory: Var,
    valid: usize,
    tgt_in: &[usize],
) -> Result<Var, AutodiffError> {
    let c = &m.config;
    let (t, s) = (tgt_in.len(), tape.shape(memory).0);
    let causal = key_mask(t, t, |q, k| k > q);
    let cross = (valid < s).then(|| key_mask(t, s, |_, k| k >= valid));
    let mut x = embed(m, tape, "dec", tgt_in)?;
    for l in 0..c.num_layers {
        let p = format!("dec.l{l}");
        let a = multi_head(tape, &format!("{p}.self"), c.heads, x, x, Some(&causal))?;
        x = add_norm_op(tape, x, a, &format!("{p}.ln1"), c.dropout)?;
        let a = multi_head(tape, &format!("{p}.cross"), c.heads, x, memory, cross.as_deref())?;
        x = add_norm_op(tape, x, a, &format!("{p}.ln3"), c.dropout)?;
        let f = ffn(tape, x, &p)?;
        x = add_norm_op(tape, x, f, &format!("{p}.ln2"), c.dropout)?;
    }
    linear(tape, x, "out")
}

pub(super) fn logits<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    src: &[usize],
    tgt_in: &[usize],
    src_valid: Option<usize>,
) -> Result<Var, NmtError> {
    let valid = src_valid.unwrap_or(src.len()).clamp(1, src.len());
    let memory = encode(m, tape, src, valid)?;
    Ok(decode(m, tape, memory, valid, tgt_in)?)
}

pub(super) fn encode_memory<T: Scalar>(m: &Model<T>, src: &[usize]) -> Result<Memory<T>, NmtError> {
    let mut tape = Tape::new(&m.params, 0);
    let x = encode(m, &mut tape, src, src.len())?;
    Ok(Memory::from_tape(&tape, x, None))
}

pub(super) fn decode_logits<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    memory: &Memory<T>,
    prefix: &[usize],
) -> Result<Var, NmtError> {
    let (mem, _) = memory.load(tape)?;
    Ok(decode(m, tape, mem, memory.rows, prefix)?)
}
