//! Non-learned point set kernels: farthest point sampling, kNN graphs,
//! merging and duplication.
//!
//! Distances are always evaluated in `f64`, whatever precision the caller's
//! model runs in, so that tie-breaking is stable across precisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// An ordered list of 3-D points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointCloud { points }
    }

    /// Like [`PointCloud::new`] but rejects NaN and infinite coordinates.
    pub fn try_new(points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::arg(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points })
    }

    pub fn empty() -> Self {
        PointCloud { points: Vec::new() }
    }

    /// Reads an `N×3` tensor.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        assert_eq!(t.cols(), 3, "point tensors have three columns");
        let d = t.data();
        let points = d.chunks_exact(3).map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]).collect();
        PointCloud { points }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::from_rows(&self.points)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.points
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    #[inline]
    pub fn get(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud { points: indices.iter().map(|&i| self.points[i]).collect() }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / n)
    }

    pub fn scaled(&self, s: f64) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| p.map(|c| c * s)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

impl From<Vec<[f64; 3]>> for PointCloud {
    fn from(points: Vec<[f64; 3]>) -> Self {
        PointCloud { points }
    }
}

#[inline]
pub fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Directed kNN edges from each query point to `k` reference points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl NeighborGraph {
    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_queries(&self) -> usize {
        self.neighbors.len().checked_div(self.k).unwrap_or(0)
    }

    /// Reference indices of query `q`, nearest first.
    #[inline]
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.neighbors[q * self.k..(q + 1) * self.k]
    }

    /// Reference index of every edge, query-major.
    pub fn flat(&self) -> &[usize] {
        &self.neighbors
    }

    /// Query index of every edge, query-major (`q` repeated `k` times).
    pub fn query_of_edge(&self) -> Vec<usize> {
        (0..self.neighbors.len()).map(|e| e / self.k).collect()
    }
}

/// Greedy farthest point sampling.
///
/// Starts from `start`; every further pick maximizes the minimum distance to
/// the points already taken. Ties go to the smallest index.
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::arg(format!("fps: cannot select {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::arg(format!("fps: start index {start} out of range for {n} points")));
    }
    let pts = cloud.points();
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = start;
    loop {
        out.push(current);
        taken[current] = true;
        if out.len() == m {
            break;
        }
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = sq_dist(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// Index of the point farthest from the cloud's centroid (smallest index on
/// ties). Unlike a fixed start index this does not depend on point order.
pub fn farthest_from_centroid(cloud: &PointCloud) -> usize {
    let c = cloud.centroid();
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, p) in cloud.points().iter().enumerate() {
        let d = sq_dist(p, &c);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// The `k` nearest references of every query, sorted by distance then index.
/// When queries and references coincide a point is its own first neighbor.
pub fn knn_graph(queries: &PointCloud, references: &PointCloud, k: usize) -> Result<NeighborGraph> {
    let n_ref = references.len();
    if k == 0 || k > n_ref {
        return Err(Error::arg(format!("knn: k={k} invalid for {n_ref} reference points")));
    }
    let refs = references.points();
    let mut neighbors = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n_ref);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for q in queries.points() {
        scratch.clear();
        scratch.extend(refs.iter().enumerate().map(|(j, r)| (sq_dist(q, r), j)));
        if k < n_ref {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(cmp);
        neighbors.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(NeighborGraph { k, neighbors })
}

/// `a` followed by `b`.
pub fn merge(a: &PointCloud, b: &PointCloud) -> PointCloud {
    let mut points = Vec::with_capacity(a.len() + b.len());
    points.extend_from_slice(a.points());
    points.extend_from_slice(b.points());
    PointCloud { points }
}

/// Row concatenation of two feature maps with equal channel counts.
pub fn merge_features<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.cols() != b.cols() {
        return Err(Error::arg(format!(
            "merge_features: channel mismatch ({} vs {})",
            a.cols(),
            b.cols()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_vec(a.rows() + b.rows(), a.cols(), data))
}

/// Indices into `merge(keep, refine)` chosen by FPS down to `target` points.
pub fn aggregate_downsample_indices(
    keep: &PointCloud,
    refine: &PointCloud,
    target: usize,
    start: usize,
) -> Result<Vec<usize>> {
    fps(&merge(keep, refine), target, start)
}

/// Merges `keep` and `refine`, then FPS-downsamples the union to `target` points.
pub fn aggregate_downsample(
    keep: &PointCloud,
    refine: &PointCloud,
    target: usize,
    start: usize,
) -> Result<PointCloud> {
    let merged = merge(keep, refine);
    let idx = fps(&merged, target, start)?;
    Ok(merged.select(&idx))
}

/// Source index of every output slot of [`duplicate`]: point-major,
/// point `i` fills slots `i*r .. i*r + r`.
pub fn duplicate_indices(n: usize, r: usize) -> Vec<usize> {
    (0..n * r).map(|s| s / r.max(1)).collect()
}

/// Repeats every point `r` times, point-major.
pub fn duplicate(cloud: &PointCloud, r: usize) -> Result<PointCloud> {
    if r < 1 {
        return Err(Error::arg("duplicate: ratio must be at least 1"));
    }
    Ok(cloud.select(&duplicate_indices(cloud.len(), r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line4() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    }

    #[test]
    fn fps_on_a_line_picks_the_far_end() {
        assert_eq!(fps(&line4(), 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_square_corners_break_ties_by_index() {
        let sq = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ]);
        assert_eq!(fps(&sq, 3, 0).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn fps_full_selection_is_a_permutation() {
        let mut idx = fps(&line4(), 4, 2).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_with_duplicates_still_returns_distinct_indices() {
        let c = PointCloud::new(vec![[0.0; 3]; 5]);
        let mut idx = fps(&c, 5, 0).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_rejects_bad_arguments() {
        assert!(fps(&line4(), 5, 0).is_err());
        assert!(fps(&line4(), 0, 0).is_err());
        assert!(fps(&line4(), 2, 4).is_err());
    }

    #[test]
    fn knn_self_is_first() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let g = knn_graph(&c, &c, 1).unwrap();
        assert_eq!(g.neighbors(0), &[0]);
        assert_eq!(g.neighbors(1), &[1]);
    }

    #[test]
    fn knn_sorts_by_distance() {
        let q = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let r = PointCloud::new(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let g = knn_graph(&q, &r, 2).unwrap();
        assert_eq!(g.neighbors(0), &[0, 2]);
        let full = knn_graph(&q, &r, 3).unwrap();
        assert_eq!(full.neighbors(0), &[0, 2, 1]);
        assert!(knn_graph(&q, &r, 4).is_err());
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        let q = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let r = PointCloud::new(vec![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(knn_graph(&q, &r, 2).unwrap().neighbors(0), &[0, 1]);
    }

    #[test]
    fn merge_and_duplicate_layouts() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let b = PointCloud::new(vec![[1.0, 1.0, 1.0]]);
        assert_eq!(merge(&a, &b).points(), &[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert_eq!(merge(&a, &PointCloud::empty()), a);
        let d = duplicate(&merge(&a, &b), 2).unwrap();
        assert_eq!(
            d.points(),
            &[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]
        );
        assert_eq!(duplicate(&a, 1).unwrap(), a);
        assert!(duplicate(&a, 0).is_err());
    }

    #[test]
    fn merge_features_checks_channels() {
        let a = Tensor::<f64>::zeros(2, 3);
        let b = Tensor::<f64>::zeros(1, 3);
        assert_eq!(merge_features(&a, &b).unwrap().shape(), (3, 3));
        assert!(merge_features(&a, &Tensor::<f64>::zeros(1, 2)).is_err());
    }

    #[test]
    fn aggregate_downsample_tie_goes_to_first_refine_point() {
        let keep = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let refine = PointCloud::new(vec![[5.0, 0.0, 0.0], [5.1, 0.0, 0.0]]);
        // The 5.1 point is strictly farther, so it wins without any tie.
        let out = aggregate_downsample(&keep, &refine, 2, 0).unwrap();
        assert_eq!(out.points(), &[[0.0, 0.0, 0.0], [5.1, 0.0, 0.0]]);
        let refine = PointCloud::new(vec![[5.0, 0.0, 0.0], [-5.0, 0.0, 0.0]]);
        let out = aggregate_downsample(&keep, &refine, 2, 0).unwrap();
        assert_eq!(out.points(), &[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
    }

    #[test]
    fn aggregate_downsample_with_empty_refine_permutes_keep() {
        let out = aggregate_downsample(&line4(), &PointCloud::empty(), 4, 0).unwrap();
        let mut pts: Vec<_> = out.points().iter().map(|p| p[0] as i32).collect();
        pts.sort_unstable();
        assert_eq!(pts, vec![0, 1, 2, 3]);
    }
}
