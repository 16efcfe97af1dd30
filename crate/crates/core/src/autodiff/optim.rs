use super::{Gradients, ParamSet};
use crate::Scalar;

pub trait Optimizer<T: Scalar> {
    fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>);
    fn lr(&self) -> f64;
    fn set_lr(&mut self, lr: f64);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl<T: Scalar> Optimizer<T> for Sgd {
    fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) {
        let lr = T::of(self.lr);
        for id in params.ids() {
            if let (Some(g), true) = (grads.get(id), params.get(id).trainable) {
                for (w, &g) in params.get_mut(id).tensor.data.iter_mut().zip(g) {
                    *w -= lr * g;
                }
            }
        }
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with bias-corrected moments. State is keyed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) {
        if self.m.len() != params.len() {
            self.m = params.ids().iter().map(|_| Vec::new()).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for id in params.ids() {
            let (Some(g), true) = (grads.get(id), params.get(id).trainable) else { continue };
            let i = id.index();
            let n = g.len();
            if self.m[i].len() != n {
                self.m[i] = vec![T::zero(); n];
                self.v[i] = vec![T::zero(); n];
            }
            let w = &mut params.get_mut(id).tensor.data;
            for j in 0..n {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = b1 * *m + (T::one() - b1) * g[j];
                *v = b2 * *v + (T::one() - b2) * g[j] * g[j];
                w[j] -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    fn half_square(w0: f64) -> (ParamSet<f64>, Gradients<f64>) {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new(vec![1], vec![w0]).unwrap()).unwrap();
        let g = {
            let mut t = Tape::new(&p, 0);
            let w = t.param_named("w").unwrap();
            let sq = t.mul(w, w).unwrap();
            let l = t.scale(sq, 0.5);
            t.backward(l).unwrap()
        };
        (p, g)
    }

    #[test]
    fn sgd_on_half_square() {
        let (mut p, g) = half_square(1.0);
        Sgd { lr: 0.1 }.step(&mut p, &g);
        assert!((p.by_name("w").unwrap().tensor.data[0] - 0.9).abs() < 1e-15);
        Sgd { lr: 0.0 }.step(&mut p, &g);
        assert!((p.by_name("w").unwrap().tensor.data[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr() {
        for w0 in [1.0, -3.0, 1e-3, 250.0] {
            let (mut p, g) = half_square(w0);
            let mut opt = Adam::new(0.01);
            opt.step(&mut p, &g);
            let moved = (p.by_name("w").unwrap().tensor.data[0] - w0).abs();
            assert!((moved - 0.01).abs() < 1e-6, "{w0}: {moved}");
        }
        let (mut p, g) = half_square(2.0);
        let mut opt = Adam::new(0.0);
        opt.step(&mut p, &g);
        assert_eq!(p.by_name("w").unwrap().tensor.data[0], 2.0);
    }
}
