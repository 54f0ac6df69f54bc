use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{farthest_from_centroid, fps, knn_graph, NeighborGraph, PointCloud};
use crate::params::ParamBuilder;
use crate::tensor::Scalar;

use super::{Init, Linear};

/// Which downsampling layer the encoder uses between EdgeConvs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    /// Learned attention-weighted pooling of neighbor points and features.
    #[default]
    Adaptive,
    /// FPS centers kept as-is, features max-pooled over each center's kNN.
    Point,
}

/// Output of a pooling layer.
pub struct Pooled {
    pub points: Var,
    pub features: Var,
    /// Indices of the sampled centers in the input cloud.
    pub centers: Vec<usize>,
    /// kNN graph from the centers into the input cloud.
    pub graph: NeighborGraph,
    /// Per-edge geometry weights (`E×1`), adaptive pooling only.
    pub geo_weights: Option<Var>,
    /// Per-edge, per-channel feature weights (`E×C`), adaptive pooling only.
    pub feat_weights: Option<Var>,
}

fn sample_centers(cloud: &PointCloud, rate: usize, k: usize) -> Result<(Vec<usize>, NeighborGraph)> {
    if rate < 1 {
        return Err(Error::arg("pooling rate must be at least 1"));
    }
    let n = cloud.len();
    if k > n {
        return Err(Error::arg(format!("pooling: k={k} exceeds the {n} input points")));
    }
    let m = n.div_ceil(rate);
    let centers = fps(cloud, m, farthest_from_centroid(cloud))?;
    let graph = knn_graph(&cloud.select(&centers), cloud, k)?;
    Ok((centers, graph))
}

/// Adaptive graph pooling.
///
/// For a sampled center `i` and each of its neighbors `j`, the relation
/// `(f_i - f_j) + K(p_i - p_j)` passes through a hidden layer and two heads:
/// a scalar head whose softmax over the neighbors weights the coordinates,
/// and a per-channel head whose softmax weights the features. Pooled points
/// are therefore convex combinations of input points.
#[derive(Clone, Debug)]
pub struct AdaptGp {
    pos_map: Linear,
    relation: Linear,
    geo_head: Linear,
    feat_head: Linear,
    rate: usize,
    k: usize,
}

impl AdaptGp {
    pub fn new<S: Scalar>(
        b: &mut ParamBuilder<S>,
        name: &str,
        channels: usize,
        hidden: usize,
        rate: usize,
        k: usize,
    ) -> Self {
        b.scope(name, |b| AdaptGp {
            pos_map: Linear::new(b, "pos_map", 3, channels, false, Init::FanIn),
            relation: Linear::new(b, "relation", channels, hidden, true, Init::FanIn),
            geo_head: Linear::new(b, "geo_head", hidden, 1, false, Init::FanIn),
            feat_head: Linear::new(b, "feat_head", hidden, channels, false, Init::FanIn),
            rate,
            k,
        })
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    /// The linear maps `K`, relation, geometry head and feature head, in that order.
    pub fn linears(&self) -> [&Linear; 4] {
        [&self.pos_map, &self.relation, &self.geo_head, &self.feat_head]
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, points: Var, features: Var) -> Result<Pooled> {
        let cloud = tape.cloud(points);
        if tape.shape(features).0 != cloud.len() {
            return Err(Error::arg("adaptgp: feature rows do not match point count"));
        }
        let (centers, graph) = sample_centers(&cloud, self.rate, self.k)?;
        let center_of_edge: Vec<usize> = graph.query_of_edge().into_iter().map(|q| centers[q]).collect();
        let nbr: Vec<usize> = graph.flat().to_vec();

        // g = f + K p, so (f_i - f_j) + K(p_i - p_j) = g_i - g_j, and the
        // relation layer's linear part distributes over the difference.
        let kp = self.pos_map.forward(tape, points)?;
        let g = tape.add(features, kp);
        let w_rel = tape.param(self.relation.weight);
        let q = tape.matmul(g, w_rel);
        let qi = tape.gather(q, center_of_edge);
        let qj = tape.gather(q, nbr.clone());
        let rel = tape.sub(qi, qj);
        let b_rel = tape.param(self.relation.bias.expect("relation layer has a bias"));
        let rel = tape.add_bias(rel, b_rel);
        let hidden = tape.relu(rel);

        let k = graph.k();
        let geo_logits = self.geo_head.forward(tape, hidden)?;
        let geo_w = tape.group_softmax(geo_logits, k);
        let feat_logits = self.feat_head.forward(tape, hidden)?;
        let feat_w = tape.group_softmax(feat_logits, k);

        let pj = tape.gather(points, nbr.clone());
        let pw = tape.mul_col(geo_w, pj);
        let pooled_points = tape.group_sum(pw, k);
        let fj = tape.gather(features, nbr);
        let fw = tape.mul(feat_w, fj);
        let pooled_features = tape.group_sum(fw, k);
        Ok(Pooled {
            points: pooled_points,
            features: pooled_features,
            centers,
            graph,
            geo_weights: Some(geo_w),
            feat_weights: Some(feat_w),
        })
    }
}

/// FPS-and-max pooling baseline: centers keep their coordinates, features are
/// the channel-wise max over each center's neighborhood.
#[derive(Clone, Debug)]
pub struct PointPooling {
    pub rate: usize,
    pub k: usize,
}

impl PointPooling {
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, points: Var, features: Var) -> Result<Pooled> {
        let cloud = tape.cloud(points);
        let (centers, graph) = sample_centers(&cloud, self.rate, self.k)?;
        let pooled_points = tape.gather(points, centers.clone());
        let fj = tape.gather(features, graph.flat().to_vec());
        let pooled_features = tape.group_max(fj, graph.k());
        Ok(Pooled {
            points: pooled_points,
            features: pooled_features,
            centers,
            graph,
            geo_weights: None,
            feat_weights: None,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Pooling {
    Adaptive(AdaptGp),
    Point(PointPooling),
}

impl Pooling {
    /// A copy whose neighborhood size is at most `n`.
    pub fn clamped(&self, n: usize) -> Pooling {
        let n = n.max(1);
        match self {
            Pooling::Adaptive(a) => Pooling::Adaptive(AdaptGp { k: a.k.min(n), ..a.clone() }),
            Pooling::Point(p) => Pooling::Point(PointPooling { k: p.k.min(n), rate: p.rate }),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, points: Var, features: Var) -> Result<Pooled> {
        match self {
            Pooling::Adaptive(a) => a.forward(tape, points, features),
            Pooling::Point(p) => p.forward(tape, points, features),
        }
    }
}
