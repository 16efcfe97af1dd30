use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, dot, mm, mm_nt, mm_tn};
use super::params::{Gradients, ParamId, ParamSet};
use super::{shape_err, AutodiffError};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output position `t` is centred on input `t`.
    Same,
    /// Output position `t` sees inputs `t-k+1 ..= t` only.
    Causal,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Broadcast(Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Conv1d { x: Var, w: Var, k: usize, pad_left: usize, cols: Vec<T> },
    Glu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout(Var, Vec<T>),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MaskFill(Var, Vec<bool>),
    SumAll(Var),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    /// Empty for parameter leaves, whose values stay in the `ParamSet`.
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations on 2-D values for one forward pass and replays them
/// backwards. One tape per example; `backward` may run once per recording.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
    seed: u64,
    backward_done: bool,
}

fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut s = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

fn log_softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::neg_infinity());
        return;
    }
    let lse = m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            training: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            backward_done: false,
        }
    }

    /// Enables dropout.
    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    /// Clears the recording, keeping the parameter borrow and reseeding
    /// dropout.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => &self.params.get(id).tensor.data,
            _ => &n.value,
        }
    }

    /// First element; the value of a `(1,1)` loss.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn row(&self, v: Var, r: usize) -> &[T] {
        let c = self.nodes[v.0].cols;
        &self.value(v)[r * c..(r + 1) * c]
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let (rows, cols) = (p.tensor.rows(), p.tensor.cols());
        self.nodes.push(Node { rows, cols, value: Vec::new(), op: Op::Param(id), needs_grad: p.trainable });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, AutodiffError> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, AutodiffError> {
        if data.len() != rows * cols {
            return shape_err("constant", format!("{} values for ({rows},{cols})", data.len()));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, &[]))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![T::zero(); rows * cols], Op::Leaf, &[])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(sa)
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<T>), AutodiffError> {
        let (r, c) = self.same_shape(op, a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((r, c, out))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T) -> (usize, usize, Vec<T>) {
        let (r, c) = self.shape(a);
        (r, c, self.value(a).iter().map(|&x| f(x)).collect())
    }

    /// `(m,k) × (k,n) → (m,n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return shape_err("matmul", format!("({m},{k}) x ({k2},{n})"));
        }
        let mut out = vec![T::zero(); m * n];
        mm(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b), &[a, b]))
    }

    /// `(m,k) × (n,k)ᵀ → (m,n)`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return shape_err("matmul_t", format!("({m},{k}) x ({n},{k2})^T"));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c, out) = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(r, c, out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c, out) = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(r, c, out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c, out) = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(r, c, out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `(1,n)` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let ((r, c), sb) = (self.shape(a), self.shape(row));
        if sb != (1, c) {
            return shape_err("add_row", format!("({r},{c}) + {sb:?}"));
        }
        let b = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(b).map(|(&x, &y)| x + y)).collect();
        Ok(self.push(r, c, out, Op::AddRow(a, row), &[a, row]))
    }

    /// Repeats a `(1,1)` value over `(rows, cols)`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        if self.shape(a) != (1, 1) {
            return shape_err("broadcast", format!("{:?} is not 1x1", self.shape(a)));
        }
        let x = self.scalar(a);
        Ok(self.push(rows, cols, vec![x; rows * cols], Op::Broadcast(a), &[a]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let (r, k, out) = self.map(a, |x| x * c);
        self.push(r, k, out, Op::Scale(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c, out) = self.map(a, T::tanh);
        self.push(r, c, out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c, out) = self.map(a, sigmoid);
        self.push(r, c, out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c, out) = self.map(a, |x| x.max(T::zero()));
        self.push(r, c, out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c, out) = self.map(a, T::exp);
        self.push(r, c, out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let (r, c, out) = self.map(a, T::ln);
        self.push(r, c, out, Op::Log(a), &[a])
    }

    /// Row-wise softmax. Rows that are entirely `-inf` become zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![T::zero(); r * c];
        for (x, o) in self.value(a).chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(x, o);
        }
        self.push(r, c, out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![T::zero(); r * c];
        for (x, o) in self.value(a).chunks(c).zip(out.chunks_mut(c)) {
            log_softmax_row(x, o);
        }
        self.push(r, c, out, Op::LogSoftmax(a), &[a])
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let (v, d) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: v });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        Ok(self.push(ids.len(), d, out, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Temporal convolution of `x: (T, d_in)` with a `(k*d_in, d_out)` kernel
    /// whose row `j*d_in + i` weights input channel `i` at tap `j`.
    pub fn conv1d(&mut self, x: Var, w: Var, k: usize, padding: Padding) -> Result<Var, AutodiffError> {
        let ((t, din), (kd, dout)) = (self.shape(x), self.shape(w));
        if k == 0 || kd != k * din {
            return shape_err("conv1d", format!("input ({t},{din}), kernel ({kd},{dout}), width {k}"));
        }
        let pad_left = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Causal => k - 1,
        };
        let xv = self.value(x);
        let mut cols = vec![T::zero(); t * kd];
        for r in 0..t {
            for j in 0..k {
                let src = r + j;
                if src >= pad_left && src - pad_left < t {
                    let s = src - pad_left;
                    cols[r * kd + j * din..r * kd + (j + 1) * din].copy_from_slice(&xv[s * din..(s + 1) * din]);
                }
            }
        }
        let mut out = vec![T::zero(); t * dout];
        mm(&cols, self.value(w), &mut out, t, kd, dout);
        Ok(self.push(t, dout, out, Op::Conv1d { x, w, k, pad_left, cols }, &[x, w]))
    }

    /// Splits channels into halves `(a, b)` and returns `a ⊗ σ(b)`.
    pub fn glu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if c % 2 != 0 {
            return shape_err("glu", format!("odd width {c}"));
        }
        let d = c / 2;
        let out = self.value(x).chunks(c).flat_map(|row| (0..d).map(move |i| row[i] * sigmoid(row[d + i]))).collect();
        Ok(self.push(r, d, out, Op::Glu(x), &[x]))
    }

    /// Per-row standardization followed by `gain ⊗ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return shape_err("layer_norm", format!("gain {:?} bias {:?} for width {c}", self.shape(gain), self.shape(bias)));
        }
        let n = T::of(c as f64);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + T::of(eps)).sqrt();
            rstd.push(s);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * s;
                xhat.push(h);
                out.push(h * g[i] + b[i]);
            }
        }
        Ok(self.push(r, c, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Inverted dropout; the identity unless the tape is training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let (r, c) = self.shape(x);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..r * c).map(|_| if self.rng.random::<f64>() >= rate { keep } else { T::zero() }).collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push(r, c, out, Op::Dropout(x, mask), &[x])
    }

    /// Mean negative log-likelihood (nats) of `targets` under row-wise
    /// softmax of `logits`, skipping positions equal to `pad`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return shape_err("cross_entropy", format!("{} targets for {r} rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: c });
        }
        let targets: Vec<Option<usize>> = targets.iter().map(|&t| (t != pad).then_some(t)).collect();
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(AutodiffError::AllPadding);
        }
        let mut probs = vec![T::zero(); r * c];
        let mut nll = T::zero();
        let mut lp = vec![T::zero(); c];
        for ((x, p), t) in self.value(logits).chunks(c).zip(probs.chunks_mut(c)).zip(&targets) {
            if let Some(t) = *t {
                log_softmax_row(x, &mut lp);
                nll -= lp[t];
                for (pi, &l) in p.iter_mut().zip(&lp) {
                    *pi = l.exp();
                }
            }
        }
        let loss = nll / T::of(count as f64);
        Ok(self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets, probs, count }, &[logits]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else { return shape_err("concat_cols", "no inputs") };
        let r = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return shape_err("concat_cols", "row counts differ");
        }
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.row(p, i));
            }
        }
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else { return shape_err("concat_rows", "no inputs") };
        let c = self.shape(first).1;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return shape_err("concat_rows", "column counts differ");
        }
        let r: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(r * c);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(r, c, out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return shape_err("slice_rows", format!("{start}..{} of {r}", start + len));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        Ok(self.push(len, c, out, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return shape_err("slice_cols", format!("{start}..{} of {c}", start + len));
        }
        let out = self.value(a).chunks(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        Ok(self.push(r, len, out, Op::SliceCols(a, start), &[a]))
    }

    /// Sets entries where `mask` is true to `-inf`.
    pub fn mask_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return shape_err("mask_fill", format!("mask of {} for ({r},{c})", mask.len()));
        }
        let out = self.value(a).iter().zip(mask).map(|(&v, &m)| if m { T::neg_infinity() } else { v }).collect();
        Ok(self.push(r, c, out, Op::MaskFill(a, mask.to_vec()), &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(1, 1, vec![s], Op::SumAll(a), &[a])
    }

    /// `softmax(q kᵀ / √d_k + mask) v`. Returns the output and the weights.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&[bool]>) -> Result<(Var, Var), AutodiffError> {
        let dk = self.shape(q).1;
        let s = self.matmul_t(q, k)?;
        let s = self.scale(s, T::of(1.0 / (dk as f64).sqrt()));
        let s = match mask {
            Some(m) => self.mask_fill(s, m)?,
            None => s,
        };
        let w = self.softmax(s);
        Ok((self.matmul(w, v)?, w))
    }

    /// Reverse pass from a `(1,1)` value. Returns gradients for trainable
    /// parameters reached by the graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.shape(loss) != (1, 1) {
            return Err(AutodiffError::NotScalar);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(self.params);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop(i, &g, &mut grads);
            if let Op::Param(id) = self.nodes[i].op {
                out.add(id, &g);
            }
        }
        Ok(out)
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        let y = &node.value;
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].needs_grad {
                let n = nodes[v.0].rows * nodes[v.0].cols;
                f(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]));
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let k = self.shape(a).1;
                acc(a, &mut |ga| mm_nt(g, self.value(b), ga, rows, cols, k));
                acc(b, &mut |gb| mm_tn(self.value(a), g, gb, rows, k, cols));
            }
            &Op::MatMulT(a, b) => {
                let k = self.shape(a).1;
                acc(a, &mut |ga| mm(g, self.value(b), ga, rows, cols, k));
                acc(b, &mut |gb| mm_tn(g, self.value(a), gb, rows, cols, k));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| axpy(T::one(), g, ga));
                acc(b, &mut |gb| axpy(T::one(), g, gb));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| axpy(T::one(), g, ga));
                acc(b, &mut |gb| axpy(-T::one(), g, gb));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                acc(a, &mut |ga| ga.iter_mut().zip(g).zip(vb).for_each(|((o, &g), &y)| *o += g * y));
                acc(b, &mut |gb| gb.iter_mut().zip(g).zip(va).for_each(|((o, &g), &x)| *o += g * x));
            }
            &Op::AddRow(a, b) => {
                acc(a, &mut |ga| axpy(T::one(), g, ga));
                acc(b, &mut |gb| g.chunks(cols).for_each(|row| axpy(T::one(), row, gb)));
            }
            &Op::Broadcast(a) => acc(a, &mut |ga| ga[0] += g.iter().copied().sum()),
            &Op::Scale(a, c) => acc(a, &mut |ga| axpy(c, g, ga)),
            &Op::Tanh(a) => acc(a, &mut |ga| {
                ga.iter_mut().zip(g).zip(y).for_each(|((o, &g), &y)| *o += g * (T::one() - y * y))
            }),
            &Op::Sigmoid(a) => acc(a, &mut |ga| {
                ga.iter_mut().zip(g).zip(y).for_each(|((o, &g), &y)| *o += g * y * (T::one() - y))
            }),
            &Op::Relu(a) => acc(a, &mut |ga| {
                ga.iter_mut().zip(g).zip(y).for_each(|((o, &g), &y)| {
                    if y > T::zero() {
                        *o += g
                    }
                })
            }),
            &Op::Exp(a) => acc(a, &mut |ga| ga.iter_mut().zip(g).zip(y).for_each(|((o, &g), &y)| *o += g * y)),
            &Op::Log(a) => {
                let x = self.value(a);
                acc(a, &mut |ga| ga.iter_mut().zip(g).zip(x).for_each(|((o, &g), &x)| *o += g / x))
            }
            &Op::Softmax(a) => acc(a, &mut |ga| {
                for ((o, g), y) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let s = dot(g, y);
                    for j in 0..cols {
                        o[j] += y[j] * (g[j] - s);
                    }
                }
            }),
            &Op::LogSoftmax(a) => acc(a, &mut |ga| {
                for ((o, g), y) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    if y[0] == T::neg_infinity() && y.iter().all(|v| *v == T::neg_infinity()) {
                        continue;
                    }
                    let s: T = g.iter().copied().sum();
                    for j in 0..cols {
                        o[j] += g[j] - y[j].exp() * s;
                    }
                }
            }),
            Op::Gather(table, ids) => acc(*table, &mut |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    axpy(T::one(), &g[r * cols..(r + 1) * cols], &mut gt[id * cols..(id + 1) * cols]);
                }
            }),
            Op::Conv1d { x, w, k, pad_left, cols: im } => {
                let (t, din) = self.shape(*x);
                let kd = k * din;
                acc(*w, &mut |gw| mm_tn(im, g, gw, t, kd, cols));
                acc(*x, &mut |gx| {
                    let mut gcol = vec![T::zero(); t * kd];
                    mm_nt(g, self.value(*w), &mut gcol, t, cols, kd);
                    for r in 0..t {
                        for j in 0..*k {
                            let src = r + j;
                            if src >= *pad_left && src - pad_left < t {
                                let s = src - pad_left;
                                axpy(T::one(), &gcol[r * kd + j * din..r * kd + (j + 1) * din], &mut gx[s * din..(s + 1) * din]);
                            }
                        }
                    }
                });
            }
            &Op::Glu(x) => {
                let xv = self.value(x);
                let d = cols;
                acc(x, &mut |gx| {
                    for ((o, g), row) in gx.chunks_mut(2 * d).zip(g.chunks(d)).zip(xv.chunks(2 * d)) {
                        for j in 0..d {
                            let s = sigmoid(row[d + j]);
                            o[j] += g[j] * s;
                            o[d + j] += g[j] * row[j] * s * (T::one() - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = self.value(*gain);
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| g.chunks(cols).for_each(|row| axpy(T::one(), row, gb)));
                acc(*x, &mut |gx| {
                    let n = T::of(cols as f64);
                    let mut dh = vec![T::zero(); cols];
                    for (((o, gr), hr), &s) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(xhat.chunks(cols)).zip(rstd) {
                        for j in 0..cols {
                            dh[j] = gr[j] * gv[j];
                        }
                        let m1 = dh.iter().copied().sum::<T>() / n;
                        let m2 = dot(&dh, hr) / n;
                        for j in 0..cols {
                            o[j] += s * (dh[j] - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => acc(*x, &mut |gx| gx.iter_mut().zip(g).zip(mask).for_each(|((o, &g), &m)| *o += g * m)),
            Op::CrossEntropy { logits, targets, probs, count } => {
                let c = self.shape(*logits).1;
                let scale = g[0] / T::of(*count as f64);
                acc(*logits, &mut |gl| {
                    for ((o, p), t) in gl.chunks_mut(c).zip(probs.chunks(c)).zip(targets) {
                        if let Some(t) = *t {
                            axpy(scale, p, o);
                            o[t] -= scale;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            axpy(T::one(), &g[r * cols + off..r * cols + off + pc], &mut gp[r * pc..(r + 1) * pc]);
                        }
                    });
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.shape(p).0 * cols;
                    acc(p, &mut |gp| axpy(T::one(), &g[off..off + n], gp));
                    off += n;
                }
            }
            &Op::SliceRows(a, start) => acc(a, &mut |ga| axpy(T::one(), g, &mut ga[start * cols..(start + rows) * cols])),
            &Op::SliceCols(a, start) => {
                let ac = self.shape(a).1;
                acc(a, &mut |ga| {
                    for r in 0..rows {
                        axpy(T::one(), &g[r * cols..(r + 1) * cols], &mut ga[r * ac + start..r * ac + start + cols]);
                    }
                })
            }
            Op::MaskFill(a, mask) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).zip(mask).for_each(|((o, &g), &m)| {
                    if !m {
                        *o += g
                    }
                })
            }),
            &Op::SumAll(a) => acc(a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
        }
    }
}
