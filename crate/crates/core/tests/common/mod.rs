//! Reference implementations and harnesses shared by the integration tests.
#![allow(dead_code)]

use fbnet::autograd::{Tape, Var};
use fbnet::params::ParamStore;
use fbnet::tensor::Tensor;
use fbnet::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
}

/// Coordinates on a coarse integer grid, so exact distance ties are common.
pub fn grid_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64, rng.gen_range(-1..=1) as f64]).collect())
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Greedy farthest-point sampling recomputing every min-distance from scratch.
pub fn brute_fps(cloud: &PointCloud, m: usize, start: usize) -> Vec<usize> {
    let pts = cloud.points();
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..pts.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| d2(&pts[i], &pts[c])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        chosen.push(best.expect("a candidate remains").1);
    }
    chosen
}

/// Full sort of every reference by (distance, index), truncated to `k`.
pub fn brute_knn(queries: &PointCloud, refs: &PointCloud, k: usize) -> Vec<Vec<usize>> {
    queries
        .points()
        .iter()
        .map(|q| {
            let mut all: Vec<(f64, usize)> = refs.points().iter().enumerate().map(|(j, r)| (d2(q, r), j)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn one_sided(a: &PointCloud, b: &PointCloud, sq: bool) -> f64 {
    let s: f64 = a
        .points()
        .iter()
        .map(|x| {
            let m = b.points().iter().map(|y| d2(x, y)).fold(f64::INFINITY, f64::min);
            if sq { m } else { m.sqrt() }
        })
        .sum();
    s / a.len() as f64
}

pub fn brute_cd_l2(a: &PointCloud, b: &PointCloud) -> f64 {
    one_sided(a, b, true) + one_sided(b, a, true)
}

pub fn brute_cd_l1(a: &PointCloud, b: &PointCloud) -> f64 {
    0.5 * (one_sided(a, b, false) + one_sided(b, a, false))
}

/// `Σ w ⊙ x` for a fixed random weight matrix, reduced to a `1×1` node.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let w = tape.constant(random_tensor(&mut rng(seed), r, c, 1.0));
    let p = tape.mul(x, w);
    let col = tape.group_sum(p, r);
    let ones = tape.constant(Tensor::full(c, 1, 1.0));
    tape.matmul(col, ones)
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
    /// Perturbations that switched a discrete choice (a kNN or sampling
    /// tie within the step size). Zero means the instance is tie-free.
    pub branch_switches: usize,
}

impl GradCheck {
    pub fn tie_free(&self) -> bool {
        self.branch_switches == 0
    }
}

/// Floor on the denominator of the relative error, so entries whose true
/// gradient is essentially zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-5;

/// Compares backward-pass gradients of `loss` against central differences
/// for every entry of every stored array (inputs included, when they are
/// stored as parameters).
pub fn check_gradients(store: &mut ParamStore<f64>, loss: impl Fn(&mut Tape<f64>) -> Var) -> GradCheck {
    let (analytic, base): (Vec<Tensor<f64>>, u64) = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        let g = tape.backward(l);
        let grads = store
            .iter()
            .map(|(id, p)| g.param(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols())))
            .collect();
        (grads, tape.selection_fingerprint())
    };
    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        (tape.value(l).get(0, 0), tape.selection_fingerprint())
    };
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut out = GradCheck { max_rel: 0.0, worst: String::new(), checked: 0, branch_switches: 0 };
    for (pi, (id, name)) in ids.iter().enumerate() {
        for j in 0..store.value(*id).data().len() {
            let orig = store.value(*id).data()[j];
            store.value_mut(*id).data_mut()[j] = orig + STEP;
            let (up, f_up) = eval(store);
            store.value_mut(*id).data_mut()[j] = orig - STEP;
            let (down, f_down) = eval(store);
            store.value_mut(*id).data_mut()[j] = orig;
            if f_up != base || f_down != base {
                out.branch_switches += 1;
            }
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            out.checked += 1;
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{j}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}
pub mod cases;
