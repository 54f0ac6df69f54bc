//! Coarse completion network: a hierarchical graph encoder
//! (EdgeConv / pooling / EdgeConv / pooling / EdgeConv, then global max+avg
//! pooling) and a fully-connected decoder to a small complete point set.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{aggregate_downsample, aggregate_downsample_indices, PointCloud};
use crate::nn::{
    global_max_avg_pool, Activation, AdaptGp, EdgeConv, Init, LayerSpec, Linear, PointPooling,
    Pooling, PoolingKind,
};
use crate::params::ParamBuilder;
use crate::tensor::Scalar;

/// Slope of the leaky ReLU after every EdgeConv.
pub const EDGE_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgNetConfig {
    pub edgeconv_dims: [usize; 3],
    pub pool_rates: [usize; 2],
    pub k: usize,
    /// Hidden widths of the decoder; the output layer has `3·coarse_size` units.
    pub fc_hidden: [usize; 2],
    pub coarse_size: usize,
    pub seed_size: usize,
    #[serde(default)]
    pub pooling: PoolingKind,
}

impl Default for HgNetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl HgNetConfig {
    /// Dimensions (64, 128, 512), rates (4, 2), k = 16, decoder 1024-1024-384.
    pub fn full() -> Self {
        HgNetConfig {
            edgeconv_dims: [64, 128, 512],
            pool_rates: [4, 2],
            k: 16,
            fc_hidden: [1024, 1024],
            coarse_size: 128,
            seed_size: 512,
            pooling: PoolingKind::Adaptive,
        }
    }

    /// Halved widths and a 256-point seed.
    pub fn toy() -> Self {
        HgNetConfig {
            edgeconv_dims: [32, 64, 256],
            fc_hidden: [512, 512],
            seed_size: 256,
            ..Self::full()
        }
    }

    pub fn global_width(&self) -> usize {
        2 * self.edgeconv_dims[2]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.edgeconv_dims.iter().chain(&self.fc_hidden).chain(&self.pool_rates);
        if dims.copied().any(|d| d == 0) || self.k == 0 || self.coarse_size == 0 || self.seed_size == 0 {
            return Err(Error::Config(format!("HGNet dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub struct Encoded {
    pub global: Var,
    /// Point counts after each pooling layer.
    pub pooled_sizes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct HgNet {
    cfg: HgNetConfig,
    edge: [EdgeConv; 3],
    pools: [Pooling; 2],
    fc: [Linear; 3],
}

impl HgNet {
    pub fn new<S: Scalar>(b: &mut ParamBuilder<S>, cfg: &HgNetConfig) -> Self {
        let [d0, d1, d2] = cfg.edgeconv_dims;
        let k = cfg.k;
        let act = Activation::LeakyRelu(EDGE_SLOPE);
        b.scope("hgnet", |b| {
            let ec = |b: &mut ParamBuilder<S>, name: &str, i: usize, o: usize| {
                EdgeConv::new(b, name, &LayerSpec::new(i, o).with_k(k).with_activation(act))
            };
            let pool = |b: &mut ParamBuilder<S>, name: &str, c: usize, rate: usize| match cfg.pooling {
                PoolingKind::Adaptive => Pooling::Adaptive(AdaptGp::new(b, name, c, c, rate, k)),
                PoolingKind::Point => Pooling::Point(PointPooling { rate, k }),
            };
            let e0 = ec(b, "edge0", 3, d0);
            let p0 = pool(b, "pool0", d0, cfg.pool_rates[0]);
            let e1 = ec(b, "edge1", d0, d1);
            let p1 = pool(b, "pool1", d1, cfg.pool_rates[1]);
            let e2 = ec(b, "edge2", d1, d2);
            let [h0, h1] = cfg.fc_hidden;
            let fc = [
                Linear::new(b, "fc0", cfg.global_width(), h0, true, Init::FanIn),
                Linear::new(b, "fc1", h0, h1, true, Init::FanIn),
                Linear::new(b, "fc2", h1, 3 * cfg.coarse_size, true, Init::FanIn),
            ];
            HgNet { cfg: cfg.clone(), edge: [e0, e1, e2], pools: [p0, p1], fc }
        })
    }

    pub fn config(&self) -> &HgNetConfig {
        &self.cfg
    }

    pub fn decoder_output(&self) -> &Linear {
        &self.fc[2]
    }

    pub fn pools(&self) -> &[Pooling; 2] {
        &self.pools
    }

    /// Partial cloud (`N×3`) to a `1×2C` global feature.
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<S>, partial: Var) -> Result<Encoded> {
        let n = tape.shape(partial).0;
        if n < self.cfg.k {
            return Err(Error::arg(format!(
                "hgnet: {n} input points is fewer than k={}",
                self.cfg.k
            )));
        }
        // Deeper levels shrink k to the pooled point count, so small inputs
        // still produce a global feature.
        let mut pts = partial;
        let mut f = self.edge[0].forward(tape, pts, pts)?;
        let mut pooled_sizes = Vec::with_capacity(2);
        for (pool, edge) in self.pools.iter().zip(&self.edge[1..]) {
            let p = pool.clamped(tape.shape(pts).0).forward(tape, pts, f)?;
            pts = p.points;
            pooled_sizes.push(p.centers.len());
            f = edge.clamped(p.centers.len()).forward(tape, pts, p.features)?;
        }
        let global = global_max_avg_pool(tape, f)?;
        Ok(Encoded { global, pooled_sizes })
    }

    /// Global feature to the `coarse_size×3` coarse cloud.
    pub fn decode<S: Scalar>(&self, tape: &mut Tape<S>, global: Var) -> Result<Var> {
        let (r, c) = tape.shape(global);
        if r != 1 || c != self.cfg.global_width() {
            return Err(Error::arg(format!(
                "hgnet decode: expected a 1x{} global feature, got {r}x{c}",
                self.cfg.global_width()
            )));
        }
        let mut h = self.fc[0].forward(tape, global)?;
        h = tape.relu(h);
        h = self.fc[1].forward(tape, h)?;
        h = tape.relu(h);
        let out = self.fc[2].forward(tape, h)?;
        Ok(tape.reshape(out, self.cfg.coarse_size, 3))
    }

    /// Seed for the refinement stage: FPS over `[partial, coarse]`.
    pub fn coarse_seed<S: Scalar>(&self, tape: &mut Tape<S>, partial: Var, coarse: Var) -> Result<Var> {
        seed_from(tape, partial, coarse, self.cfg.seed_size)
    }
}

pub(crate) fn seed_from<S: Scalar>(tape: &mut Tape<S>, partial: Var, coarse: Var, size: usize) -> Result<Var> {
    let idx = aggregate_downsample_indices(&tape.cloud(partial), &tape.cloud(coarse), size, 0)?;
    let merged = tape.concat_rows(&[partial, coarse]);
    Ok(tape.gather(merged, idx))
}

/// Point-cloud form of the seed construction.
pub fn hgnet_coarse_seed(partial: &PointCloud, coarse: &PointCloud, seed_size: usize) -> Result<PointCloud> {
    aggregate_downsample(partial, coarse, seed_size, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    fn tiny() -> HgNetConfig {
        HgNetConfig {
            edgeconv_dims: [4, 6, 8],
            pool_rates: [4, 2],
            k: 4,
            fc_hidden: [16, 16],
            coarse_size: 8,
            seed_size: 16,
            pooling: PoolingKind::Adaptive,
        }
    }

    fn ring(n: usize) -> Tensor<f64> {
        let v: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        Tensor::from_rows(&v)
    }

    #[test]
    fn symmetric_ring_is_finite() {
        let mut store = ParamStore::<f64>::new();
        let net = HgNet::new(&mut ParamBuilder::new(&mut store, 0), &tiny());
        let mut t = Tape::new(&store);
        let p = t.constant(ring(64));
        let enc = net.encode(&mut t, p).unwrap();
        assert_eq!(enc.pooled_sizes, vec![16, 8]);
        assert_eq!(t.shape(enc.global), (1, 16));
        let coarse = net.decode(&mut t, enc.global).unwrap();
        assert_eq!(t.shape(coarse), (8, 3));
        assert!(t.value(coarse).is_finite());
    }

    #[test]
    fn zero_output_layer_puts_coarse_points_at_origin() {
        let mut store = ParamStore::<f64>::new();
        let net = HgNet::new(&mut ParamBuilder::new(&mut store, 0), &tiny());
        let out = net.decoder_output().clone();
        store.value_mut(out.weight).fill(0.0);
        store.value_mut(out.bias.unwrap()).fill(0.0);
        let mut t = Tape::new(&store);
        let g = t.constant(Tensor::zeros(1, 16));
        let c = net.decode(&mut t, g).unwrap();
        assert!(t.value(c).data().iter().all(|&v| v == 0.0));
        let wrong = t.constant(Tensor::zeros(1, 15));
        assert!(net.decode(&mut t, wrong).is_err());
    }

    #[test]
    fn too_few_points_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        let net = HgNet::new(&mut ParamBuilder::new(&mut store, 0), &tiny());
        let mut t = Tape::new(&store);
        let p = t.constant(ring(3));
        assert!(net.encode(&mut t, p).is_err());
    }
}
