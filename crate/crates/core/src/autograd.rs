//! A small reverse-mode automatic differentiation tape over [`Tensor`]s.
//!
//! Every forward evaluation records its operations on a fresh [`Tape`].
//! Parameters enter the tape once per forward pass (the same node is reused
//! however many times a layer runs), so gradients of weight-shared layers
//! accumulate naturally across unrolled time steps.

use std::sync::Arc;

use crate::geometry::PointCloud;
use crate::metrics;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_into, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Scale(Var, f64),
    Gather(Var, Arc<[usize]>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    GroupMax(Var, usize, Vec<u32>),
    GroupSum(Var, usize),
    GroupSoftmax(Var, usize),
    Chamfer(Var, Var, Tensor<S>, Tensor<S>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Coordinates of an `N×3` node.
    pub fn cloud(&self, v: Var) -> PointCloud {
        PointCloud::from_tensor(self.value(v))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The node for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), g)
    }

    /// Adds a `1×C` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a single row");
        assert_eq!(b.cols(), self.value(x).cols(), "bias width mismatch");
        let mut out = self.value(x).clone();
        let c = out.cols();
        if c > 0 {
            for row in out.data_mut().chunks_exact_mut(c) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let g = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddBias(x, bias), g)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let g = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), g)
    }

    /// Scales row `r` of `x` by the single entry in row `r` of `w` (`R×1`).
    pub fn mul_col(&mut self, w: Var, x: Var) -> Var {
        let (tw, tx) = (self.value(w), self.value(x));
        assert_eq!(tw.cols(), 1, "row weights must be a column");
        assert_eq!(tw.rows(), tx.rows(), "row weight count mismatch");
        let mut out = tx.clone();
        let c = out.cols();
        if c > 0 {
            for (row, &s) in out.data_mut().chunks_exact_mut(c).zip(tw.data()) {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        let g = self.needs(w) || self.needs(x);
        self.push(out, Op::MulCol(w, x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        let g = self.needs(x);
        self.push(out, Op::Relu(x), g)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        assert!(slope > 0.0, "leaky slope must be positive");
        let s = S::of(slope);
        let out = self.value(x).map(|v| if v > S::zero() { v } else { v * s });
        let g = self.needs(x);
        self.push(out, Op::LeakyRelu(x, slope), g)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let f = S::of(s);
        let out = self.value(x).map(|v| v * f);
        let g = self.needs(x);
        self.push(out, Op::Scale(x, s), g)
    }

    /// Row `r` of the result is row `indices[r]` of `x`.
    pub fn gather(&mut self, x: Var, indices: impl Into<Arc<[usize]>>) -> Var {
        let indices: Arc<[usize]> = indices.into();
        let src = self.value(x);
        let c = src.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::from_vec(indices.len(), c, data);
        let g = self.needs(x);
        self.push(out, Op::Gather(x, indices), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one input");
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), c, "concat_rows column mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::from_vec(rows, c, data), Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshaped(rows, cols);
        let g = self.needs(x);
        self.push(out, Op::Reshape(x), g)
    }

    /// Column-wise max over consecutive groups of `k` rows: `(N·k)×C → N×C`.
    /// The first maximal row of a group receives the gradient.
    pub fn group_max(&mut self, x: Var, k: usize) -> Var {
        let t = self.value(x);
        let (r, c) = t.shape();
        assert!(k > 0 && r % k == 0, "group_max: {r} rows not divisible by {k}");
        let n = r / k;
        let mut out = Tensor::zeros(n, c);
        let mut arg = vec![0u32; n * c];
        for g in 0..n {
            let o = out.row_mut(g);
            o.copy_from_slice(t.row(g * k));
            for j in 1..k {
                for (ch, &v) in t.row(g * k + j).iter().enumerate() {
                    if v > o[ch] {
                        o[ch] = v;
                        arg[g * c + ch] = j as u32;
                    }
                }
            }
        }
        let gr = self.needs(x);
        self.push(out, Op::GroupMax(x, k, arg), gr)
    }

    /// Column-wise sum over consecutive groups of `k` rows.
    pub fn group_sum(&mut self, x: Var, k: usize) -> Var {
        let t = self.value(x);
        let (r, c) = t.shape();
        assert!(k > 0 && r % k == 0, "group_sum: {r} rows not divisible by {k}");
        let n = r / k;
        let mut out = Tensor::zeros(n, c);
        for g in 0..n {
            let o = out.row_mut(g);
            for j in 0..k {
                for (acc, &v) in o.iter_mut().zip(t.row(g * k + j)) {
                    *acc += v;
                }
            }
        }
        let gr = self.needs(x);
        self.push(out, Op::GroupSum(x, k), gr)
    }

    pub fn group_mean(&mut self, x: Var, k: usize) -> Var {
        let s = self.group_sum(x, k);
        self.scale(s, 1.0 / k as f64)
    }

    /// Softmax over each group of `k` consecutive rows, independently per column.
    pub fn group_softmax(&mut self, x: Var, k: usize) -> Var {
        let t = self.value(x);
        let (r, c) = t.shape();
        assert!(k > 0 && r % k == 0, "group_softmax: {r} rows not divisible by {k}");
        let mut out = t.clone();
        let mut mx = vec![S::zero(); c];
        let mut sum = vec![S::zero(); c];
        for g in 0..r / k {
            mx.copy_from_slice(t.row(g * k));
            for j in 1..k {
                for (m, &v) in mx.iter_mut().zip(t.row(g * k + j)) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
            sum.iter_mut().for_each(|s| *s = S::zero());
            for j in 0..k {
                let row = out.row_mut(g * k + j);
                for ((v, m), s) in row.iter_mut().zip(&mx).zip(sum.iter_mut()) {
                    *v = (*v - *m).exp();
                    *s += *v;
                }
            }
            for j in 0..k {
                let row = out.row_mut(g * k + j);
                for (v, s) in row.iter_mut().zip(&sum) {
                    *v /= *s;
                }
            }
        }
        let gr = self.needs(x);
        self.push(out, Op::GroupSoftmax(x, k), gr)
    }

    /// Chamfer L2 distance between two `N×3` nodes as a `1×1` node.
    pub fn chamfer_l2(&mut self, a: Var, b: Var) -> crate::Result<Var> {
        let (pa, pb) = (self.cloud(a), self.cloud(b));
        let (loss, ga, gb) = metrics::chamfer_l2_with_grad(&pa, &pb)?;
        let to_t = |g: Vec<[f64; 3]>| Tensor::<S>::from_rows(&g);
        let gr = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::full(1, 1, S::of(loss)), Op::Chamfer(a, b, to_t(ga), to_t(gb)), gr))
    }

    /// Hash of every discrete choice recorded so far: gather indices (kNN
    /// graphs, sampling) and group-max winners. Two evaluations with equal
    /// fingerprints followed the same piecewise-smooth branch.
    pub fn selection_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Gather(_, idx) => idx.hash(&mut h),
                Op::GroupMax(_, _, arg) => arg.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the `1×1` node `root` with respect to every parameter and
    /// variable leaf it depends on.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert_eq!(self.shape(root), (1, 1), "backward starts from a scalar");
        let mut grads: Vec<Option<Tensor<S>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::full(1, 1, S::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(p, v)| v.map(|v| (ParamId(p), v)))
            .collect();
        Gradients { grads, params }
    }

    fn acc(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `op(a)·op(b)` into the gradient slot of `v`.
    fn acc_gemm(
        &self,
        grads: &mut [Option<Tensor<S>>],
        v: Var,
        a: &Tensor<S>,
        ta: bool,
        b: &Tensor<S>,
        tb: bool,
    ) {
        if !self.needs(v) {
            return;
        }
        let shape = self.shape(v);
        match &mut grads[v.0] {
            Some(existing) => gemm_into(a, ta, b, tb, existing, S::one()),
            slot @ None => {
                let mut t = Tensor::zeros(shape.0, shape.1);
                gemm_into(a, ta, b, tb, &mut t, S::zero());
                *slot = Some(t);
            }
        }
    }

    fn propagate(&self, i: usize, g: Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => unreachable!("leaves do not propagate"),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc_gemm(grads, *a, &g, false, tb, true);
                self.acc_gemm(grads, *b, ta, true, &g, false);
            }
            Op::AddBias(x, bias) => {
                if self.needs(*bias) {
                    let c = g.cols();
                    let mut gb = Tensor::zeros(1, c);
                    if c > 0 {
                        for row in g.data().chunks_exact(c) {
                            for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                    self.acc(grads, *bias, gb);
                }
                self.acc(grads, *x, g);
            }
            Op::Add(a, b) => {
                if self.needs(*b) {
                    self.acc(grads, *b, g.clone());
                }
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.needs(*b) {
                    self.acc(grads, *b, g.map(|v| -v));
                }
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *b, Tensor::from_vec(g.rows(), g.cols(), d));
                }
            }
            Op::MulCol(w, x) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let c = g.cols();
                if self.needs(*w) {
                    let d = if c == 0 {
                        vec![S::zero(); g.rows()]
                    } else {
                        g.data()
                            .chunks_exact(c)
                            .zip(tx.data().chunks_exact(c))
                            .map(|(gr, xr)| {
                                gr.iter().zip(xr).fold(S::zero(), |s, (&p, &q)| s + p * q)
                            })
                            .collect()
                    };
                    self.acc(grads, *w, Tensor::from_vec(g.rows(), 1, d));
                }
                if self.needs(*x) {
                    let mut gx = g;
                    if c > 0 {
                        for (row, &s) in gx.data_mut().chunks_exact_mut(c).zip(tw.data()) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                    self.acc(grads, *x, gx);
                }
            }
            Op::Relu(x) => {
                let mut g = g;
                for (gv, &o) in g.data_mut().iter_mut().zip(node.value.data()) {
                    if o <= S::zero() {
                        *gv = S::zero();
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::LeakyRelu(x, slope) => {
                let s = S::of(*slope);
                let mut g = g;
                for (gv, &o) in g.data_mut().iter_mut().zip(node.value.data()) {
                    if o <= S::zero() {
                        *gv *= s;
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Scale(x, s) => {
                let mut g = g;
                g.scale_assign(S::of(*s));
                self.acc(grads, *x, g);
            }
            Op::Gather(x, idx) => {
                if !self.needs(*x) {
                    return;
                }
                let (r, c) = self.shape(*x);
                let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(r, c));
                for (k, &src) in idx.iter().enumerate() {
                    let dst = slot.row_mut(src);
                    for (d, &v) in dst.iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let r = self.shape(p).0;
                    if self.needs(p) {
                        let d = g.data()[off * c..(off + r) * c].to_vec();
                        self.acc(grads, p, Tensor::from_vec(r, c, d));
                    }
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.needs(p) {
                        let mut t = Tensor::zeros(r, c);
                        for row in 0..r {
                            t.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                        }
                        self.acc(grads, p, t);
                    }
                    off += c;
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                self.acc(grads, *x, g.reshaped(r, c));
            }
            Op::GroupMax(x, k, arg) => {
                let (r, c) = self.shape(*x);
                let mut gx = Tensor::zeros(r, c);
                for grp in 0..r / k {
                    for ch in 0..c {
                        let j = arg[grp * c + ch] as usize;
                        gx.set(grp * k + j, ch, g.get(grp, ch));
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::GroupSum(x, k) => {
                let (r, c) = self.shape(*x);
                let mut gx = Tensor::zeros(r, c);
                for row in 0..r {
                    gx.row_mut(row).copy_from_slice(g.row(row / k));
                }
                self.acc(grads, *x, gx);
            }
            Op::GroupSoftmax(x, k) => {
                let y = &node.value;
                let (r, c) = y.shape();
                let mut gx = Tensor::zeros(r, c);
                let mut dot = vec![S::zero(); c];
                for grp in 0..r / k {
                    dot.iter_mut().for_each(|d| *d = S::zero());
                    for j in 0..*k {
                        let row = grp * k + j;
                        for ((d, &gy), &yy) in dot.iter_mut().zip(g.row(row)).zip(y.row(row)) {
                            *d += gy * yy;
                        }
                    }
                    for j in 0..*k {
                        let row = grp * k + j;
                        let out = gx.row_mut(row);
                        for (ch, o) in out.iter_mut().enumerate() {
                            *o = y.get(row, ch) * (g.get(row, ch) - dot[ch]);
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Chamfer(a, b, ga, gb) => {
                let s = g.get(0, 0);
                if self.needs(*a) {
                    self.acc(grads, *a, ga.map(|v| v * s));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, gb.map(|v| v * s));
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a variable or parameter leaf; `None` when it does not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every parameter gradient into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<S>) {
        for &(p, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                store.get_mut(p).grad.add_assign(g);
            }
        }
    }
}
