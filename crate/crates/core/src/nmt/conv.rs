//! Convolutional encoder-decoder: gated convolutional blocks with residual
//! connections and per-layer (multi-step) decoder attention.

use rand::Rng;

use super::{linear, param, record, Memory, Model, ModelConfig, NmtError, Trace};
use crate::autodiff::{AutodiffError, Padding, ParamSet, Tape, Tensor, Var};
use crate::Scalar;

const EMB_STD: f64 = 0.1;

fn half<T: Scalar>() -> T {
    T::of(0.5f64.sqrt())
}

pub(super) fn add_linear<T: Scalar, R: Rng>(
    ps: &mut ParamSet<T>,
    rng: &mut R,
    name: &str,
    din: usize,
    dout: usize,
) -> Result<(), NmtError> {
    ps.add(&format!("{name}.w"), Tensor::normal(vec![din, dout], (1.0 / din as f64).sqrt(), rng))?;
    ps.add(&format!("{name}.b"), Tensor::zeros(vec![1, dout]))?;
    Ok(())
}

pub(super) fn init<T: Scalar, R: Rng>(
    c: &ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
    rng: &mut R,
    ps: &mut ParamSet<T>,
) -> Result<(), NmtError> {
    let e = c.embed_dim;
    let layers = c.conv_layers()?;
    for (side, vocab) in [("enc", src_vocab), ("dec", tgt_vocab)] {
        ps.add(&format!("{side}.emb"), Tensor::normal(vec![vocab, e], EMB_STD, rng))?;
        ps.add(&format!("{side}.pos"), Tensor::normal(vec![c.max_positions, e], EMB_STD, rng))?;
        add_linear(ps, rng, &format!("{side}.in"), e, layers[0].channels)?;
        let mut din = layers[0].channels;
        for (l, layer) in layers.iter().enumerate() {
            let fan_in = layer.width * din;
            ps.add(
                &format!("{side}.c{l}.w"),
                Tensor::normal(vec![fan_in, 2 * layer.channels], (1.0 / fan_in as f64).sqrt(), rng),
            )?;
            ps.add(&format!("{side}.c{l}.b"), Tensor::zeros(vec![1, 2 * layer.channels]))?;
            if din != layer.channels {
                let std = (1.0 / din as f64).sqrt();
                ps.add(&format!("{side}.c{l}.res"), Tensor::normal(vec![din, layer.channels], std, rng))?;
            }
            if side == "dec" {
                add_linear(ps, rng, &format!("dec.a{l}.in"), layer.channels, e)?;
                add_linear(ps, rng, &format!("dec.a{l}.out"), e, layer.channels)?;
            }
            din = layer.channels;
        }
        add_linear(ps, rng, &format!("{side}.out"), din, e)?;
    }
    add_linear(ps, rng, "out", e, tgt_vocab)?;
    Ok(())
}

/// Word plus learned position embeddings.
fn embed<T: Scalar>(tape: &mut Tape<'_, T>, side: &str, ids: &[usize]) -> Result<Var, AutodiffError> {
    let emb = param(tape, &format!("{side}.emb"))?;
    let pos = param(tape, &format!("{side}.pos"))?;
    let w = tape.gather(emb, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let p = tape.gather(pos, &positions)?;
    tape.add(w, p)
}

/// `conv → GLU`, plus the residual branch (projected when widths differ).
fn block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    name: &str,
    width: usize,
    padding: Padding,
    dropout: f64,
) -> Result<(Var, Var), AutodiffError> {
    let res = match tape.params().by_name(&format!("{name}.res")) {
        Some(_) => {
            let p = param(tape, &format!("{name}.res"))?;
            tape.matmul(x, p)?
        }
        None => x,
    };
    let w = param(tape, &format!("{name}.w"))?;
    let b = param(tape, &format!("{name}.b"))?;
    let xd = tape.dropout(x, dropout);
    let y = tape.conv1d(xd, w, width, padding)?;
    let y = tape.add_row(y, b)?;
    Ok((tape.glu(y)?, res))
}

fn residual<T: Scalar>(tape: &mut Tape<'_, T>, y: Var, res: Var) -> Result<Var, AutodiffError> {
    let s = tape.add(y, res)?;
    Ok(tape.scale(s, half()))
}

/// Returns `(z, z + e)`: encoder outputs and attention values.
fn encode<T: Scalar>(m: &Model<T>, tape: &mut Tape<'_, T>, src: &[usize]) -> Result<(Var, Var), NmtError> {
    let c = &m.config;
    let e = embed(tape, "enc", src)?;
    let e = tape.dropout(e, c.dropout);
    let mut x = linear(tape, e, "enc.in")?;
    for (l, layer) in c.conv_layers()?.iter().enumerate() {
        let (y, res) = block(tape, x, &format!("enc.c{l}"), layer.width, Padding::Same, c.dropout)?;
        x = residual(tape, y, res)?;
    }
    let z = linear(tape, x, "enc.out")?;
    let values = tape.add(z, e)?;
    Ok((z, values))
}

fn decode<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    z: Var,
    values: Var,
    tgt_in: &[usize],
    trace: &mut Option<&mut Trace>,
) -> Result<Var, NmtError> {
    let c = &m.config;
    let g = embed(tape, "dec", tgt_in)?;
    let g = tape.dropout(g, c.dropout);
    let mut x = linear(tape, g, "dec.in")?;
    for (l, layer) in c.conv_layers()?.iter().enumerate() {
        let (y, res) = block(tape, x, &format!("dec.c{l}"), layer.width, Padding::Causal, c.dropout)?;
        let d = linear(tape, y, &format!("dec.a{l}.in"))?;
        let d = tape.add(d, g)?;
        let d = tape.scale(d, half());
        let scores = tape.matmul_t(d, z)?;
        let a = tape.softmax(scores);
        record(trace, |t| {
            let cols = tape.shape(a).1;
            t.attention.extend(tape.value(a).chunks(cols).map(|r| r.iter().map(|v| v.as_f64()).collect()));
        });
        let ctx = tape.matmul(a, values)?;
        let ctx = linear(tape, ctx, &format!("dec.a{l}.out"))?;
        let y = residual(tape, y, ctx)?;
        x = residual(tape, y, res)?;
    }
    let h = linear(tape, x, "dec.out")?;
    let h = tape.dropout(h, c.dropout);
    Ok(linear(tape, h, "out")?)
}

pub(super) fn logits<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    src: &[usize],
    tgt_in: &[usize],
    mut trace: Option<&mut Trace>,
) -> Result<Var, NmtError> {
    let (z, values) = encode(m, tape, src)?;
    decode(m, tape, z, values, tgt_in, &mut trace)
}

pub(super) fn encode_memory<T: Scalar>(m: &Model<T>, src: &[usize]) -> Result<Memory<T>, NmtError> {
    let mut tape = Tape::new(&m.params, 0);
    let (z, values) = encode(m, &mut tape, src)?;
    Ok(Memory::from_tape(&tape, z, Some(values)))
}

pub(super) fn decode_logits<T: Scalar>(
    m: &Model<T>,
    tape: &mut Tape<'_, T>,
    memory: &Memory<T>,
    prefix: &[usize],
) -> Result<Var, NmtError> {
    let (z, values) = memory.load(tape)?;
    decode(m, tape, z, values, prefix, &mut None)
}
