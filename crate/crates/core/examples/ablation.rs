//! Runs an ablation suite (feedback, init_strategy or pooling) on tiny data.
//!
//! `cargo run --release --example ablation -- init_strategy`
use fbnet::data::{gen_dataset, GenConfig};
use fbnet::metrics::write_reports;
use fbnet::model::Profile;
use fbnet::train::{ablate, Suite, TrainConfig};

fn main() -> fbnet::Result<()> {
    let suite: Suite = std::env::args().nth(1).as_deref().unwrap_or("feedback").parse()?;
    let root = std::env::temp_dir().join("fbnet-example-ablation");
    let data = GenConfig { train: 8, val: 4, test: 4, complete_points: 256, partial_points: 128, ..GenConfig::default() };
    let manifest = gen_dataset(&data, &root.join("data"))?;
    let base = TrainConfig {
        profile: Profile::Tiny,
        epochs: 3,
        batch_size: 4,
        out_dir: root.join("runs"),
        ..TrainConfig::default()
    };
    let rows = ablate(suite, &base, &manifest)?;
    write_reports(std::io::stdout().lock(), &rows)
}
