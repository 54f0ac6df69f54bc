//! Named, gradient-carrying parameter storage.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Every learnable tensor of a model, addressed by [`ParamId`] or by its
/// dotted hierarchical name (`hgnet.pool0.feat_head.weight`).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    /// Panics on a duplicate name; names are fixed by the architecture.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value, grad });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn scale_grads(&mut self, s: S) {
        for p in &mut self.params {
            p.grad.scale_assign(s);
        }
    }

    /// Same names and values in another precision; gradients are reset.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast());
        }
        out
    }
}

/// Registers parameters under a name prefix, drawing initial values from a
/// seeded generator. Values are drawn in `f64` so that `f32` and `f64`
/// models built from one seed hold the same numbers.
pub struct ParamBuilder<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a, S: Scalar> ParamBuilder<'a, S> {
    pub fn new(store: &'a mut ParamStore<S>, seed: u64) -> Self {
        ParamBuilder { store, rng: ChaCha8Rng::seed_from_u64(seed), prefix: Vec::new() }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_owned());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| S::of(self.rng.gen_range(-bound..=bound))).collect();
        let full = self.full_name(name);
        self.store.add(full, Tensor::from_vec(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, Tensor::zeros(rows, cols))
    }
}
