//! Adam and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base: f64,
    pub factor: f64,
    /// Epochs per decay step.
    pub every: usize,
}

impl StepDecay {
    /// Learning rate for the 1-based `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(1) / self.every.max(1);
        self.base * self.factor.powi(steps as i32)
    }
}

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, beta1: f64, beta2: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Adam { beta1, beta2, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.m, &self.v)
    }

    /// Restores state saved by [`Adam::moments`] and [`Adam::steps_taken`].
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<S>>, v: Vec<Tensor<S>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One bias-corrected update of every parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = S::of(lr * c2.sqrt() / c1);
        let eps = S::of(self.eps * c2.sqrt());
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                *w -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let s = StepDecay { base: 1e-3, factor: 0.1, every: 30 };
        assert_eq!(s.lr(1), 1e-3);
        assert_eq!(s.lr(30), 1e-3);
        assert!((s.lr(31) - 1e-4).abs() < 1e-18);
        assert!((s.lr(61) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_rows(&[[1.0, -1.0]]));
        store.get_mut(id).grad = Tensor::from_rows(&[[2.0, -0.5]]);
        let mut adam = Adam::new(&store, 0.9, 0.999);
        adam.step(&mut store, 0.1);
        let w = store.value(id);
        assert!((w.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((w.get(0, 1) + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_rows(&[[3.0]]));
        let mut adam = Adam::new(&store, 0.9, 0.999);
        for _ in 0..500 {
            let w = store.value(id).get(0, 0);
            store.get_mut(id).grad = Tensor::from_rows(&[[2.0 * (w - 1.0)]]);
            adam.step(&mut store, 0.05);
        }
        assert!((store.value(id).get(0, 0) - 1.0).abs() < 1e-3);
    }
}
