//! Named parameter storage and the Adam optimizer.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, Tape, Var};
use crate::tensor::Matrix;

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Places every parameter on `tape`; the result is indexed by [`ParamId`].
    pub fn on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.ids().map(|id| tape.param(id, self.get(id))).collect()
    }

    /// Collects per-parameter gradients, zero-filled where a parameter was
    /// not reached.
    pub fn collect_grads(&self, grads: &Gradients) -> Vec<Matrix> {
        self.ids()
            .map(|id| {
                grads.param(id).unwrap_or_else(|| {
                    let v = self.get(id);
                    Matrix::zeros(v.rows(), v.cols())
                })
            })
            .collect()
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(Matrix::sum_sq).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `grads[i]` belongs to `ParamId(i)`. Parameters listed in
    /// `frozen` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Matrix], frozen: &[ParamId]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = params.values.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (i, g) in grads.iter().enumerate() {
            if frozen.contains(&ParamId(i)) {
                continue;
            }
            let p = params.values[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::row_vector(&[3.0, -2.0]));
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g = store.get(id).map(|x| 2.0 * (x - 1.0));
            adam.step(&mut store, &[g], &[]);
        }
        assert!(store.get(id).data().iter().all(|x| (x - 1.0).abs() < 1e-3));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add("x", Matrix::row_vector(&[3.0]));
        let before = store.clone();
        let mut adam = Adam::new(0.0);
        adam.step(&mut store, &[Matrix::row_vector(&[5.0])], &[]);
        assert_eq!(store, before);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = [Matrix::row_vector(&[3.0, 4.0]), Matrix::row_vector(&[12.0])];
        let n = clip_global_norm(&mut g, 5.0);
        assert!((n - 13.0).abs() < 1e-12);
        let after: f64 = g.iter().map(Matrix::sum_sq).sum();
        assert!((libm::sqrt(after) - 5.0).abs() < 1e-12);
    }
}
