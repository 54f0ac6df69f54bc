//! Chamfer distances, F-score, fidelity and minimal matching distance between
//! a shape, a noisy copy and a half crop.
use fbnet::data::{make_partial, sample_complete, ShapeSpec};
use fbnet::metrics::{chamfer_l1, chamfer_l2, fidelity, fscore, mmd, DEFAULT_TAU};
use fbnet::PointCloud;
use rand::{Rng, SeedableRng};

fn main() -> fbnet::Result<()> {
    let gt = sample_complete(&ShapeSpec::random("cylinder", 3)?, 2048)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let noisy = PointCloud::new(
        gt.points().iter().map(|p| p.map(|x| x + rng.gen_range(-0.005..0.005))).collect(),
    );
    let half = make_partial(&gt, [0.0, 0.0, 1.0], 0.5)?;

    for (name, pred) in [("noisy copy", &noisy), ("half crop", &half)] {
        println!(
            "{name:>10}: cd_l2 {:.3e} cd_l1 {:.3e} f1 {:.3} fidelity {:.3e}",
            chamfer_l2(pred, &gt)?,
            chamfer_l1(pred, &gt)?,
            fscore(pred, &gt, DEFAULT_TAU)?,
            fidelity(&half, pred)?,
        );
    }
    let refs = [sample_complete(&ShapeSpec::random("box", 4)?, 2048)?, gt.clone()];
    println!("mmd of the noisy copy: {:.3e}", mmd(&noisy, &refs)?);
    Ok(())
}
