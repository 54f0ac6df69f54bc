//! Farthest point sampling, kNN graphs, seed aggregation and duplication.
use fbnet::data::{sample_complete, Primitive, ShapeSpec};
use fbnet::geometry::{aggregate_downsample, duplicate, farthest_from_centroid, fps, knn_graph};

fn main() -> fbnet::Result<()> {
    let cloud = sample_complete(&ShapeSpec::new(Primitive::Cone { radius: 0.5, height: 1.0 }, 1), 2048)?;
    let start = farthest_from_centroid(&cloud);
    let picked = fps(&cloud, 8, start)?;
    println!("fps from point {start}: {picked:?}");

    let centers = cloud.select(&picked);
    let graph = knn_graph(&centers, &cloud, 4)?;
    for q in 0..centers.len() {
        println!("center {q} neighbors {:?}", graph.neighbors(q));
    }

    let coarse = sample_complete(&ShapeSpec::new(Primitive::Sphere { radius: 1.0 }, 2), 128)?;
    let seed = aggregate_downsample(&cloud, &coarse, 512, 0)?;
    println!("seed of {} points drawn from {} candidates", seed.len(), cloud.len() + coarse.len());
    println!("duplicated x4: {} points", duplicate(&seed, 4)?.len());
    Ok(())
}
