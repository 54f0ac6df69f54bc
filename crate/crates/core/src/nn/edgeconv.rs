use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn_graph, NeighborGraph};
use crate::params::ParamBuilder;
use crate::tensor::Scalar;

use super::{Activation, Init, LayerSpec, Linear};

/// Graph convolution over a coordinate-space kNN graph:
/// `out_i = max_j h([f_i, f_j - f_i])`.
///
/// The first linear map of `h` is split into a center part and a difference
/// part, `W_c f_i + W_d (f_j - f_i) + b`, evaluated per point and gathered
/// onto the edges. Later layers of `h` (if `spec.hidden` is non-empty) run
/// per edge. An activation follows every layer, including the last.
#[derive(Clone, Debug)]
pub struct EdgeConv {
    center: Linear,
    diff: Linear,
    rest: Vec<Linear>,
    activation: Activation,
    k: usize,
}

impl EdgeConv {
    pub fn new<S: Scalar>(b: &mut ParamBuilder<S>, name: &str, spec: &LayerSpec) -> Self {
        let widths = spec.widths();
        b.scope(name, |b| {
            let center = Linear::new(b, "center", widths[0], widths[1], true, Init::FanIn);
            let diff = Linear::new(b, "diff", widths[0], widths[1], false, Init::FanIn);
            let rest = (1..widths.len() - 1)
                .map(|i| Linear::new(b, &format!("layer{i}"), widths[i], widths[i + 1], true, Init::FanIn))
                .collect();
            EdgeConv { center, diff, rest, activation: spec.activation, k: spec.k }
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// A copy whose neighborhood size is at most `n`.
    pub fn clamped(&self, n: usize) -> EdgeConv {
        EdgeConv { k: self.k.min(n).max(1), ..self.clone() }
    }

    pub fn center(&self) -> &Linear {
        &self.center
    }

    pub fn diff(&self) -> &Linear {
        &self.diff
    }

    pub fn out_channels(&self) -> usize {
        self.rest.last().unwrap_or(&self.center).out_dim
    }

    /// Builds the kNN graph of `points` onto itself and convolves `features`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, points: Var, features: Var) -> Result<Var> {
        let cloud = tape.cloud(points);
        if tape.shape(features).0 != cloud.len() {
            return Err(Error::arg("edgeconv: feature rows do not match point count"));
        }
        let graph = knn_graph(&cloud, &cloud, self.k)?;
        self.forward_graph(tape, features, &graph)
    }

    pub fn forward_graph<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        features: Var,
        graph: &NeighborGraph,
    ) -> Result<Var> {
        let u = self.center.forward(tape, features)?;
        let v = self.diff.forward(tape, features)?;
        let own = tape.sub(u, v);
        let own = tape.gather(own, graph.query_of_edge());
        let other = tape.gather(v, graph.flat().to_vec());
        let mut h = tape.add(own, other);
        h = self.activation.apply(tape, h);
        for l in &self.rest {
            h = l.forward(tape, h)?;
            h = self.activation.apply(tape, h);
        }
        Ok(tape.group_max(h, graph.k()))
    }
}
