use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::AutodiffError;
use crate::Scalar;

/// Row-major dense array. Ops view it as `(rows, cols)` with `cols` the last
/// dimension, so a `[k, d_in, d_out]` kernel is a `(k*d_in, d_out)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} does not hold {} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut() -> T) -> Self {
        let n = shape.iter().product();
        Self { shape, data: (0..n).map(|_| f()).collect() }
    }

    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let d = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self::from_fn(shape, || T::of(d.sample(rng)))
    }

    pub fn normal<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let d = Normal::new(0.0, std).expect("finite std");
        Self::from_fn(shape, || T::of(d.sample(rng)))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols().max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters. Ids are insertion indices; iteration is by name.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
}

/// Equal when the same names hold equal parameters, whatever the insertion
/// order.
impl<T: Scalar> PartialEq for ParamSet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().zip(other.iter()).all(|((_, a), (_, b))| a == b)
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId, AutodiffError> {
        self.insert(name, tensor, true)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_string(), tensor, trainable });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, AutodiffError> {
        self.by_name.get(name).copied().ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.by_name.get(name).map(|&id| &self.params[id.0])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Name-sorted iteration.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.by_name.values().map(|&id| (id, &self.params[id.0]))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.by_name.values().copied().collect()
    }

    /// Same names and shapes in both sets.
    pub fn same_layout<U: Scalar>(&self, other: &ParamSet<U>) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((_, a), (_, b))| a.name == b.name && a.tensor.shape == b.tensor.shape)
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: Tensor { shape: p.tensor.shape.clone(), data: p.tensor.data.iter().map(|&x| U::of(x.as_f64())).collect() },
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Per-parameter gradient buffers, allocated on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self { grads: vec![None; params.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &[T]) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            slot => *slot = Some(g.to_vec()),
        }
    }

    /// Adds `other` into `self`, parameter by parameter in id order.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().flatten().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n.is_finite() {
            self.scale(T::of(max_norm / n));
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|x| x.is_finite())
    }

    pub fn clear(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_sorted() {
        let mut p = ParamSet::<f64>::new();
        p.add("b", Tensor::zeros(vec![2])).unwrap();
        p.add("a", Tensor::zeros(vec![1, 3])).unwrap();
        assert!(matches!(p.add("a", Tensor::zeros(vec![1])), Err(AutodiffError::DuplicateParam(_))));
        let names: Vec<_> = p.iter().map(|(_, x)| x.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(p.size(), 5);
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn clipping() {
        let mut p = ParamSet::<f64>::new();
        let id = p.add("w", Tensor::zeros(vec![2])).unwrap();
        let mut g = Gradients::new(&p);
        g.add(id, &[3.0, 4.0]);
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        let v = g.get(id).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }
}
