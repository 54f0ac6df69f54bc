//! Differentiable point-set layers built on the [`Tape`](crate::autograd::Tape).

mod adaptgp;
mod edgeconv;
mod nodeshuffle;
mod transformer;

pub use adaptgp::{AdaptGp, PointPooling, Pooled, Pooling, PoolingKind};
pub use edgeconv::EdgeConv;
pub use nodeshuffle::NodeShuffle;
pub use transformer::CrossTransformer;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, ParamId};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply<S: Scalar>(self, tape: &mut Tape<S>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
        }
    }
}

/// Shape of a layer: channel widths, hidden widths, neighborhood size and
/// the nonlinearity between linear maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub k: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec { in_channels, out_channels, hidden: Vec::new(), k: 16, activation: Activation::Relu }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    /// Channel widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_channels];
        w.extend(&self.hidden);
        w.push(self.out_channels);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) || self.k == 0 {
            return Err(Error::arg(format!("layer dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// How a linear map's weights start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)` for weights and bias.
    FanIn,
    Zeros,
}

/// `x·W + b` with `W` stored `in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        b: &mut ParamBuilder<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        b.scope(name, |b| {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let weight = match init {
                Init::FanIn => b.uniform("weight", in_dim, out_dim, bound),
                Init::Zeros => b.zeros("weight", in_dim, out_dim),
            };
            let bias = bias.then(|| match init {
                Init::FanIn => b.uniform("bias", 1, out_dim, bound),
                Init::Zeros => b.zeros("bias", 1, out_dim),
            });
            Linear { weight, bias, in_dim, out_dim }
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let c = tape.shape(x).1;
        if c != self.in_dim {
            return Err(Error::arg(format!("linear: expected {} channels, got {c}", self.in_dim)));
        }
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        Ok(match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => y,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

/// The same MLP applied to every row of a feature map. The activation runs
/// between layers, not after the last one.
#[derive(Clone, Debug)]
pub struct SharedMlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl SharedMlp {
    pub fn new<S: Scalar>(b: &mut ParamBuilder<S>, name: &str, spec: &LayerSpec) -> Self {
        Self::with_last_init(b, name, spec, Init::FanIn)
    }

    /// Like [`SharedMlp::new`] with a chosen initialization for the final layer.
    pub fn with_last_init<S: Scalar>(
        b: &mut ParamBuilder<S>,
        name: &str,
        spec: &LayerSpec,
        last: Init,
    ) -> Self {
        let widths = spec.widths();
        let n = widths.len() - 1;
        let layers = b.scope(name, |b| {
            (0..n)
                .map(|i| {
                    let init = if i + 1 == n { last } else { Init::FanIn };
                    Linear::new(b, &format!("layer{i}"), widths[i], widths[i + 1], true, init)
                })
                .collect()
        });
        SharedMlp { layers, activation: spec.activation }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }
}

/// Channel-wise max followed by channel-wise mean over all rows: `N×C → 1×2C`.
pub fn global_max_avg_pool<S: Scalar>(tape: &mut Tape<S>, features: Var) -> Result<Var> {
    let n = tape.shape(features).0;
    if n == 0 {
        return Err(Error::arg("global pooling of an empty feature map"));
    }
    let mx = tape.group_max(features, n);
    let avg = tape.group_mean(features, n);
    Ok(tape.concat_cols(&[mx, avg]))
}
