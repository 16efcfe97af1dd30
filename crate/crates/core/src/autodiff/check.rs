//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamSet, Tape, Var};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest per-tensor `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub step: f64,
    /// Elements compared per tensor; larger tensors are subsampled.
    pub max_per_param: usize,
    /// Denominator floor guarding tensors whose gradient is near zero.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, max_per_param: 64, floor: 1e-8, seed: 0 }
    }
}

/// Compares the tape gradient of `loss` with central differences for every
/// trainable parameter. `loss` must be deterministic given the tape seed.
pub fn check_gradients<T, F>(params: &mut ParamSet<T>, opts: CheckOptions, mut loss: F) -> Result<GradCheck, AutodiffError>
where
    T: Scalar,
    F: for<'a> FnMut(&mut Tape<'a, T>) -> Result<Var, AutodiffError>,
{
    let analytic = {
        let mut tape = Tape::new(params, opts.seed);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let mut eval = |params: &ParamSet<T>| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new(params, opts.seed);
        let l = loss(&mut tape)?;
        Ok(tape.scalar(l).as_f64())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheck { max_rel_error: 0.0, worst_param: String::new(), checked: 0 };
    for id in params.ids() {
        if !params.get(id).trainable {
            continue;
        }
        let n = params.get(id).tensor.len();
        let idx: Vec<usize> = if n > opts.max_per_param {
            let mut v = sample(&mut rng, n, opts.max_per_param).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        let zeros = vec![T::zero(); n];
        let a = analytic.get(id).unwrap_or(&zeros);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let orig = params.get(id).tensor.data[i];
            params.get_mut(id).tensor.data[i] = orig + T::of(opts.step);
            let up = eval(params)?;
            params.get_mut(id).tensor.data[i] = orig - T::of(opts.step);
            let down = eval(params)?;
            params.get_mut(id).tensor.data[i] = orig;
            let num = (up - down) / (2.0 * opts.step);
            let an = a[i].as_f64();
            diff += (an - num).powi(2);
            na += an * an;
            nn += num * num;
        }
        let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(opts.floor);
        report.checked += idx.len();
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
            report.worst_param = params.get(id).name.clone();
        }
    }
    Ok(report)
}
