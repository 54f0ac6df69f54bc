mod common;

use common::cases::micro_config;
use common::{random_cloud, random_tensor, rng};
use fbnet::autograd::Tape;
use fbnet::geometry::duplicate;
use fbnet::hgnet::{HgNet, HgNetConfig};
use fbnet::model::{fbnet_init_input, fbnet_loss, FbNet, InitInputs, InitStrategy, Profile, NUM_BLOCKS};
use fbnet::nn::{AdaptGp, CrossTransformer};
use fbnet::params::{ParamBuilder, ParamStore};
use fbnet::train::count_params;
use fbnet::PointCloud;
use rand::seq::SliceRandom;
use rand::Rng;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn cross_attention_on_itself_is_self_attention() {
    let mut r = rng(21);
    for case in 0..100 {
        let c = r.gen_range(2..12);
        let k = r.gen_range(1..9);
        let n = r.gen_range(k..40);
        let mut store = ParamStore::<f64>::new();
        let ct = CrossTransformer::new(&mut ParamBuilder::new(&mut store, case), "ct", c, k);
        let p = random_cloud(&mut r, n).to_tensor();
        let f = random_tensor(&mut r, n, c, 1.0);
        let mut tape = Tape::new(&store);
        let (pv, fv) = (tape.constant(p), tape.constant(f));
        let cross = ct.forward(&mut tape, pv, fv, pv, fv).unwrap();
        let selfa = ct.point_transformer(&mut tape, pv, fv).unwrap();
        let d = max_abs_diff(tape.value(cross).data(), tape.value(selfa).data());
        assert!(d < 1e-6, "case {case}: {d:e}");
    }
}

fn ladder(profile: Profile, partial_points: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let cfg = profile.config();
    let mut store = ParamStore::<f32>::new();
    let net = FbNet::new(&mut store, &cfg, 0).unwrap().with_schedule(1, true, InitStrategy::E);
    let partial = random_cloud(&mut rng(1), partial_points);
    let mut tape = Tape::new(&store);
    let trace = net.forward(&mut tape, &partial).unwrap();
    assert_eq!(tape.shape(trace.coarse).0, cfg.hgnet.coarse_size);
    assert_eq!(tape.shape(trace.seed).0, 512);
    let steps = trace.outputs.iter().map(|s| s.iter().map(|&v| tape.shape(v).0).collect()).collect();
    (trace.pooled_sizes.clone(), steps)
}

#[test]
fn full_2048_ladder() {
    let (pooled, steps) = ladder(Profile::Full2048, 2048);
    assert_eq!(pooled, vec![512, 256]);
    assert_eq!(steps, vec![vec![512, 1024, 2048]]);
}

#[test]
fn full_16384_ladder() {
    let (pooled, steps) = ladder(Profile::Full16384, 2048);
    assert_eq!(pooled, vec![512, 256]);
    assert_eq!(steps, vec![vec![512, 1024, 16384]]);
}

#[test]
fn profile_resolutions() {
    let want = [
        (Profile::Full2048, 2048),
        (Profile::Full4096, 4096),
        (Profile::Full8192, 8192),
        (Profile::Full16384, 16384),
    ];
    for (p, res) in want {
        let cfg = p.config();
        assert_eq!(cfg.resolution(), res, "{p}");
        assert_eq!(cfg.seed_size(), 512);
    }
}

/// With zero displacement heads every block output is its input duplicated.
fn check_identity(strategy: InitStrategy, time_steps: usize, feedback: bool) {
    let cfg = micro_config();
    let mut store = ParamStore::<f64>::new();
    let net = FbNet::new(&mut store, &cfg, 3).unwrap().with_schedule(time_steps, feedback, strategy);
    let partial = random_cloud(&mut rng(9), 48);
    let mut tape = Tape::new(&store);
    let trace = net.forward(&mut tape, &partial).unwrap().clouds(&tape);
    for t in 0..time_steps {
        for b in 0..NUM_BLOCKS {
            let prev_ff = (b > 0).then(|| &trace.outputs[t][b - 1]);
            let prev_fb = (t > 0).then(|| &trace.outputs[t - 1][b]);
            let inputs = InitInputs { partial: &partial, seed: &trace.seed, prev_ff, prev_fb };
            let target = prev_ff.map_or(cfg.seed_size(), PointCloud::len);
            let p_in = fbnet_init_input(strategy, b, t, &inputs, target).unwrap();
            let want = duplicate(&p_in, cfg.ratios[b]).unwrap();
            assert_eq!(trace.outputs[t][b], want, "{strategy:?} step {t} block {b}");
        }
    }
}

#[test]
fn zero_displacement_is_an_exact_upsampler() {
    for s in InitStrategy::ALL {
        check_identity(s, 3, true);
    }
    check_identity(InitStrategy::E, 2, false);
}

#[test]
fn zero_displacement_under_direct_chaining_duplicates_the_seed() {
    let cfg = micro_config();
    let mut store = ParamStore::<f64>::new();
    let net = FbNet::new(&mut store, &cfg, 4).unwrap().with_schedule(2, true, InitStrategy::A);
    let mut tape = Tape::new(&store);
    let trace = net.forward(&mut tape, &random_cloud(&mut rng(5), 48)).unwrap().clouds(&tape);
    let up = cfg.ratios.iter().product();
    for t in 0..2 {
        assert_eq!(trace.step_output(t), &duplicate(&trace.seed, up).unwrap());
    }
}

#[test]
fn parameter_count_does_not_depend_on_time_steps() {
    for p in Profile::ALL {
        let counts: Vec<usize> = (1..=3)
            .map(|t| count_params(&fbnet::model::FbNetConfig { time_steps: t, ..p.config() }).unwrap())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{p}: {counts:?}");
    }
}

#[test]
fn frozen_parameter_counts() {
    assert_eq!(count_params(&Profile::Full2048.config()).unwrap(), FULL_2048_PARAMS);
    assert_eq!(count_params(&Profile::Toy.config()).unwrap(), 861_897);
}

const FULL_2048_PARAMS: usize = 3_042_313;

#[test]
fn global_feature_is_permutation_invariant() {
    let cfg = HgNetConfig::toy();
    let mut store = ParamStore::<f64>::new();
    let net = HgNet::new(&mut ParamBuilder::new(&mut store, 8), &cfg);
    let mut r = rng(31);
    for case in 0..5 {
        let cloud = random_cloud(&mut r, 256);
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        perm.shuffle(&mut r);
        let shuffled = cloud.select(&perm);
        let mut tape = Tape::new(&store);
        let a = tape.constant(cloud.to_tensor());
        let b = tape.constant(shuffled.to_tensor());
        let ga = net.encode(&mut tape, a).unwrap().global;
        let gb = net.encode(&mut tape, b).unwrap().global;
        let d = max_abs_diff(tape.value(ga).data(), tape.value(gb).data());
        assert!(d < 1e-5, "case {case}: {d:e}");
    }
}

#[test]
fn adaptive_pooling_weights_and_convex_combinations() {
    let mut r = rng(41);
    for case in 0..20 {
        let (c, k, rate) = (r.gen_range(2..10), r.gen_range(1..12), r.gen_range(1..5));
        let n = r.gen_range(k.max(rate)..80);
        let mut store = ParamStore::<f64>::new();
        let gp = AdaptGp::new(&mut ParamBuilder::new(&mut store, case), "gp", c, c, rate, k);
        let pts = random_cloud(&mut r, n);
        let mut tape = Tape::new(&store);
        let p = tape.constant(pts.to_tensor());
        let f = tape.constant(random_tensor(&mut r, n, c, 2.0));
        let out = gp.forward(&mut tape, p, f).unwrap();
        assert_eq!(out.centers.len(), n.div_ceil(rate));
        let geo = tape.value(out.geo_weights.unwrap()).clone();
        let feat = tape.value(out.feat_weights.unwrap()).clone();
        let pooled = tape.value(out.points).clone();
        for q in 0..out.centers.len() {
            let mut geo_sum = 0.0;
            let mut combo = [0.0; 3];
            for (e, &j) in out.graph.neighbors(q).iter().enumerate() {
                let w = geo.get(q * k + e, 0);
                assert!(w >= 0.0);
                geo_sum += w;
                for (d, x) in combo.iter_mut().enumerate() {
                    *x += w * pts.get(j)[d];
                }
            }
            assert!((geo_sum - 1.0).abs() < 1e-6, "case {case}");
            for ch in 0..c {
                let s: f64 = (0..k).map(|e| feat.get(q * k + e, ch)).sum();
                assert!((s - 1.0).abs() < 1e-6, "case {case}");
            }
            for (d, x) in combo.iter().enumerate() {
                assert!((pooled.get(q, d) - x).abs() < 1e-5, "case {case}");
            }
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = micro_config();
    let mut r = rng(51);
    let mut store = ParamStore::<f64>::new();
    let net = FbNet::new(&mut store, &cfg, 6).unwrap();
    for b in net.blocks() {
        let w = b.displacement_head().weight;
        let (rows, cols) = store.value(w).shape();
        *store.value_mut(w) = random_tensor(&mut r, rows, cols, 0.5);
    }
    let partial = random_cloud(&mut r, 48);
    let gt = random_cloud(&mut r, 64);
    let mut tape = Tape::new(&store);
    let trace = net.forward(&mut tape, &partial).unwrap();
    let g = tape.constant(gt.to_tensor());
    let loss = fbnet_loss(&mut tape, &trace, g).unwrap();
    let grads = tape.backward(loss);
    // The last pooling layer's coordinates only decide the final kNN graph,
    // so its geometry head has no path to the loss.
    let exempt = "hgnet.pool1.geo_head.weight";
    for (id, p) in store.iter() {
        let nonzero = grads.param(id).is_some_and(|g| g.data().iter().any(|&x| x != 0.0));
        if p.name == exempt {
            assert!(!nonzero);
        } else {
            assert!(nonzero, "{} has no gradient", p.name);
        }
    }
}

#[test]
fn full_2048_checkpoint_completes_a_512_point_partial() {
    let cfg = Profile::Full2048.config();
    let mut store = ParamStore::<f32>::new();
    FbNet::new(&mut store, &cfg, 0).unwrap();
    let ckpt = fbnet::checkpoint::Checkpoint::from_store(&cfg, &store, 0, None, serde_json::Value::Null);
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in.xyz"), dir.path().join("out.xyz"));
    fbnet::data::write_xyz(&random_cloud(&mut rng(61), 512), &input).unwrap();
    let done = fbnet::train::complete(&ckpt, &input, &output).unwrap();
    assert_eq!(done.len(), 2048);
    assert_eq!(fbnet::data::read_xyz(&output).unwrap().len(), 2048);
}
