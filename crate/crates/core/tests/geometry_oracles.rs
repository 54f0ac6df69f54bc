mod common;

use common::{brute_fps, brute_knn, grid_cloud, random_cloud, rng};
use fbnet::geometry::{aggregate_downsample, duplicate, fps, knn_graph, merge};
use fbnet::PointCloud;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn fps_and_knn_match_brute_force_on_200_clouds() {
    let mut r = rng(11);
    for case in 0..200 {
        let n = r.gen_range(2..=256);
        // Every fourth cloud sits on an integer grid so ties are exercised.
        let cloud = if case % 4 == 0 { grid_cloud(&mut r, n) } else { random_cloud(&mut r, n) };
        let m = r.gen_range(1..=n.min(64));
        let start = r.gen_range(0..n);
        assert_eq!(fps(&cloud, m, start).unwrap(), brute_fps(&cloud, m, start), "case {case}");

        let k = r.gen_range(1..=n.min(20));
        let queries = if case % 2 == 0 { cloud.clone() } else { random_cloud(&mut r, 17) };
        let g = knn_graph(&queries, &cloud, k).unwrap();
        let want = brute_knn(&queries, &cloud, k);
        for (q, w) in want.iter().enumerate() {
            assert_eq!(g.neighbors(q), w.as_slice(), "case {case} query {q}");
        }
    }
}

#[test]
fn hand_traced_examples() {
    let line = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
    assert_eq!(fps(&line, 2, 0).unwrap(), vec![0, 3]);
    let square = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
    assert_eq!(fps(&square, 3, 0).unwrap(), vec![0, 2, 1]);

    let q = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
    let refs = PointCloud::new(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    assert_eq!(knn_graph(&q, &refs, 2).unwrap().neighbors(0), &[0, 2]);

    let keep = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
    let refine = PointCloud::new(vec![[5.0, 0.0, 0.0], [5.1, 0.0, 0.0]]);
    // (5.1,0,0) is farther from the origin, so FPS picks it second.
    let out = aggregate_downsample(&keep, &refine, 2, 0).unwrap();
    assert_eq!(out.points(), &[[0.0, 0.0, 0.0], [5.1, 0.0, 0.0]]);
}

#[test]
fn seed_sized_aggregation_draws_from_the_merged_set() {
    let mut r = rng(3);
    let partial = random_cloud(&mut r, 2048);
    let coarse = random_cloud(&mut r, 128);
    let merged = merge(&partial, &coarse);
    let out = aggregate_downsample(&partial, &coarse, 512, 0).unwrap();
    assert_eq!(out.len(), 512);
    assert!(out.points().iter().all(|p| merged.points().contains(p)));
}

#[test]
fn duplicate_to_the_largest_ratio() {
    let mut r = rng(4);
    let c = random_cloud(&mut r, 512);
    let d = duplicate(&c, 16).unwrap();
    assert_eq!(d.len(), 8192);
    assert_eq!(d.get(16 * 7 + 15), c.get(7));
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..max).prop_map(PointCloud::new)
}

proptest! {
    #[test]
    fn fps_returns_distinct_deterministic_indices(cloud in cloud_strategy(64), m_frac in 0.0f64..1.0, s_frac in 0.0f64..1.0) {
        let n = cloud.len();
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let start = ((n - 1) as f64 * s_frac) as usize;
        let a = fps(&cloud, m, start).unwrap();
        prop_assert_eq!(a.len(), m);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
        prop_assert!(a.iter().all(|&i| i < n));
        prop_assert_eq!(&a, &fps(&cloud, m, start).unwrap());
        prop_assert_eq!(a, brute_fps(&cloud, m, start));
    }

    #[test]
    fn knn_lists_are_sorted_by_distance(refs in cloud_strategy(48), queries in cloud_strategy(8), k_frac in 0.0f64..1.0) {
        let k = 1 + ((refs.len() - 1) as f64 * k_frac) as usize;
        let g = knn_graph(&queries, &refs, k).unwrap();
        for q in 0..queries.len() {
            let d: Vec<f64> = g.neighbors(q).iter().map(|&j| fbnet::geometry::sq_dist(&queries.get(q), &refs.get(j))).collect();
            prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn merge_and_duplicate_copy_bits(a in cloud_strategy(16), b in cloud_strategy(16), r in 1usize..5) {
        let m = merge(&a, &b);
        prop_assert_eq!(&m.points()[..a.len()], a.points());
        prop_assert_eq!(&m.points()[a.len()..], b.points());
        let d = duplicate(&a, r).unwrap();
        for i in 0..d.len() {
            prop_assert_eq!(d.get(i).map(f64::to_bits), a.get(i / r).map(f64::to_bits));
        }
    }
}
