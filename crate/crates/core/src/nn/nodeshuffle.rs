use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamBuilder;
use crate::tensor::Scalar;

use super::{Activation, EdgeConv, Init, LayerSpec, Linear};

/// Feature expansion by `r`: an EdgeConv, a linear map `C → r·C`, then a
/// point-major shuffle to `r·N` rows of `C` channels. Rows `i·r .. i·r + r`
/// come from input point `i`, matching [`duplicate`](crate::geometry::duplicate).
#[derive(Clone, Debug)]
pub struct NodeShuffle {
    edge: EdgeConv,
    expand: Linear,
    ratio: usize,
    channels: usize,
}

impl NodeShuffle {
    pub fn new<S: Scalar>(
        b: &mut ParamBuilder<S>,
        name: &str,
        channels: usize,
        ratio: usize,
        k: usize,
        activation: Activation,
    ) -> Self {
        b.scope(name, |b| {
            let spec = LayerSpec::new(channels, channels).with_k(k).with_activation(activation);
            NodeShuffle {
                edge: EdgeConv::new(b, "edge", &spec),
                expand: Linear::new(b, "expand", channels, channels * ratio.max(1), true, Init::FanIn),
                ratio,
                channels,
            }
        })
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn expand_layer(&self) -> &Linear {
        &self.expand
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, points: Var, features: Var) -> Result<Var> {
        if self.ratio < 1 {
            return Err(Error::arg("nodeshuffle: ratio must be at least 1"));
        }
        let h = self.edge.forward(tape, points, features)?;
        let wide = self.expand.forward(tape, h)?;
        Ok(shuffle(tape, wide, self.ratio))
    }
}

/// `N×(r·C) → (r·N)×C`, point-major. In row-major storage this is a reshape.
pub fn shuffle<S: Scalar>(tape: &mut Tape<S>, wide: Var, r: usize) -> Var {
    let (n, rc) = tape.shape(wide);
    tape.reshape(wide, n * r, rc / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    #[test]
    fn shuffle_splits_channel_groups_into_rows() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0]]));
        let y = shuffle(&mut t, x, 3);
        assert_eq!(t.shape(y), (3, 1));
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]));
        let y = shuffle(&mut t, x, 2);
        assert_eq!(t.value(y).row(1), &[3.0, 4.0]);
        assert_eq!(t.value(y).row(2), &[5.0, 6.0]);
    }

    #[test]
    fn row_counts_follow_the_ratio() {
        for r in [1, 2, 3] {
            let mut store = ParamStore::<f64>::new();
            let ns = {
                let mut b = ParamBuilder::new(&mut store, 2);
                NodeShuffle::new(&mut b, "ns", 2, r, 2, Activation::Relu)
            };
            let mut t = Tape::new(&store);
            let p = t.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]));
            let f = t.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]));
            let y = ns.forward(&mut t, p, f).unwrap();
            assert_eq!(t.shape(y), (3 * r, 2));
        }
    }
}
