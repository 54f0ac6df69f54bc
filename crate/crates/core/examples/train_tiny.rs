//! Trains the tiny profile for a few epochs, then evaluates every time step
//! and completes one held-out shape.
use fbnet::checkpoint::Checkpoint;
use fbnet::data::{gen_dataset, GenConfig, Split};
use fbnet::model::Profile;
use fbnet::train::{evaluate, infer, train, TrainConfig};

fn main() -> fbnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::temp_dir().join("fbnet-example-train");
    let data = GenConfig { train: 16, val: 4, test: 4, complete_points: 256, partial_points: 128, ..GenConfig::default() };
    let manifest = gen_dataset(&data, &root.join("data"))?;

    let cfg = TrainConfig {
        profile: Profile::Tiny,
        epochs: 5,
        batch_size: 4,
        out_dir: root.join("runs"),
        run_id: "tiny".into(),
        ..TrainConfig::default()
    };
    let outcome = train(&cfg, &manifest)?;
    println!("best epoch {}, final validation CD {:.5}", outcome.best_epoch, outcome.final_val_cd());

    let ckpt = Checkpoint::load(&outcome.best_checkpoint)?;
    let eval = evaluate(&ckpt, &manifest, Split::Test, None, cfg.tau)?;
    for row in &eval.rows {
        println!("{}: cd_l2 {:.5} f1 {:.3}", row.run_id, row.cd_l2.unwrap_or(f64::NAN), row.f1.unwrap_or(f64::NAN));
    }

    let (net, store) = ckpt.build_model::<f32>()?;
    let sample = &manifest.load_split(Split::Test)?[0];
    let trace = infer(&net, &store, &sample.partial)?;
    println!("{}: completed to {} points", sample.id, trace.final_output().len());
    Ok(())
}
