//! Small, tie-free instances of every differentiable component.

use fbnet::autograd::Tape;
use fbnet::fbac::{Fbac, FbacConfig};
use fbnet::hgnet::{HgNet, HgNetConfig};
use fbnet::model::{fbnet_loss, FbNet, FbNetConfig, InitStrategy};
use fbnet::nn::{Activation, AdaptGp, CrossTransformer, EdgeConv, LayerSpec, NodeShuffle, PoolingKind};
use fbnet::params::{ParamBuilder, ParamStore};

use super::{check_gradients, random_cloud, random_tensor, rng, weighted_sum, GradCheck};

const LEAKY: Activation = Activation::LeakyRelu(0.2);

pub fn edgeconv(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let spec = LayerSpec::new(3, 4).with_hidden(vec![4]).with_k(3).with_activation(LEAKY);
    let ec = EdgeConv::new(&mut ParamBuilder::new(&mut store, seed), "ec", &spec);
    let pts = store.add("input.points", random_cloud(&mut r, 8).to_tensor());
    let feats = store.add("input.features", random_tensor(&mut r, 8, 3, 1.0));
    check_gradients(&mut store, |t| {
        let (p, f) = (t.param(pts), t.param(feats));
        let o = ec.forward(t, p, f).unwrap();
        weighted_sum(t, o, seed)
    })
}

pub fn adaptgp(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let gp = AdaptGp::new(&mut ParamBuilder::new(&mut store, seed), "gp", 4, 4, 2, 3);
    let pts = store.add("input.points", random_cloud(&mut r, 8).to_tensor());
    let feats = store.add("input.features", random_tensor(&mut r, 8, 4, 1.0));
    check_gradients(&mut store, |t| {
        let (p, f) = (t.param(pts), t.param(feats));
        let out = gp.forward(t, p, f).unwrap();
        let a = weighted_sum(t, out.points, seed);
        let b = weighted_sum(t, out.features, seed + 1);
        t.add(a, b)
    })
}

pub fn cross_transformer(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ct = CrossTransformer::new(&mut ParamBuilder::new(&mut store, seed), "ct", 4, 3);
    let pa = store.add("input.pa", random_cloud(&mut r, 6).to_tensor());
    let fa = store.add("input.fa", random_tensor(&mut r, 6, 4, 1.0));
    let pb = store.add("input.pb", random_cloud(&mut r, 8).to_tensor());
    let fb = store.add("input.fb", random_tensor(&mut r, 8, 4, 1.0));
    check_gradients(&mut store, |t| {
        let v = [pa, fa, pb, fb].map(|id| t.param(id));
        let o = ct.forward(t, v[0], v[1], v[2], v[3]).unwrap();
        weighted_sum(t, o, seed)
    })
}

pub fn nodeshuffle(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ns = NodeShuffle::new(&mut ParamBuilder::new(&mut store, seed), "ns", 4, 2, 3, LEAKY);
    let pts = store.add("input.points", random_cloud(&mut r, 8).to_tensor());
    let feats = store.add("input.features", random_tensor(&mut r, 8, 4, 1.0));
    check_gradients(&mut store, |t| {
        let (p, f) = (t.param(pts), t.param(feats));
        let o = ns.forward(t, p, f).unwrap();
        weighted_sum(t, o, seed)
    })
}

/// Two chained calls of one block, the second reading the first's state,
/// scored by Chamfer distance to a random target.
pub fn fbac(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let blk = Fbac::new(&mut ParamBuilder::new(&mut store, seed), "fbac", &FbacConfig { ratio: 2, channels: 4, k: 3 });
    let head = blk.displacement_head().weight;
    *store.value_mut(head) = random_tensor(&mut r, 2, 3, 0.5);
    let p_in = store.add("input.points", random_cloud(&mut r, 8).to_tensor());
    let target = random_cloud(&mut r, 20).to_tensor();
    check_gradients(&mut store, |t| {
        let p = t.param(p_in);
        let gt = t.constant(target.clone());
        let (o1, st) = blk.forward(t, p, None).unwrap();
        let (o2, _) = blk.forward(t, p, Some(&st)).unwrap();
        let a = t.chamfer_l2(o1, gt).unwrap();
        let b = t.chamfer_l2(o2, gt).unwrap();
        t.add(a, b)
    })
}

pub fn micro_config() -> FbNetConfig {
    FbNetConfig {
        hgnet: HgNetConfig {
            edgeconv_dims: [4, 6, 8],
            pool_rates: [4, 2],
            k: 4,
            fc_hidden: [12, 12],
            coarse_size: 8,
            seed_size: 16,
            pooling: PoolingKind::Adaptive,
        },
        channels: 4,
        k: 4,
        ratios: [1, 2, 2],
        time_steps: 2,
        feedback: true,
        init_strategy: InitStrategy::E,
    }
}

/// The total unrolled loss of a micro network with random displacement heads.
pub fn fbnet_total_loss(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let net = FbNet::new(&mut store, &micro_config(), seed).unwrap();
    for b in net.blocks() {
        let w = b.displacement_head().weight;
        let (rows, cols) = store.value(w).shape();
        *store.value_mut(w) = random_tensor(&mut r, rows, cols, 0.5);
    }
    let partial = random_cloud(&mut r, 32);
    let gt = random_cloud(&mut r, 64).to_tensor();
    check_gradients(&mut store, |t| {
        let trace = net.forward(t, &partial).unwrap();
        let g = t.constant(gt.clone());
        fbnet_loss(t, &trace, g).unwrap()
    })
}

/// Chamfer distance of the coarse cloud to a target through encoder and decoder.
pub fn hgnet(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let cfg = micro_config().hgnet;
    let net = HgNet::new(&mut ParamBuilder::new(&mut store, seed), &cfg);
    let partial = store.add("input.points", random_cloud(&mut r, 64).to_tensor());
    let target = random_cloud(&mut r, 16).to_tensor();
    check_gradients(&mut store, |t: &mut Tape<f64>| {
        let p = t.param(partial);
        let enc = net.encode(t, p).unwrap();
        let coarse = net.decode(t, enc.global).unwrap();
        let gt = t.constant(target.clone());
        t.chamfer_l2(coarse, gt).unwrap()
    })
}
