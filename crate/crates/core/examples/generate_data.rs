//! Writes a small synthetic dataset and reads it back through its manifest.
use fbnet::data::{gen_dataset, DatasetManifest, GenConfig, Split};

fn main() -> fbnet::Result<()> {
    let out = std::env::temp_dir().join("fbnet-example-data");
    let cfg = GenConfig { train: 8, val: 2, test: 2, ..GenConfig::default() };
    gen_dataset(&cfg, &out)?;
    let manifest = DatasetManifest::load(&out.join("manifest.json"))?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:?}: {} shapes at resolution {:?}", manifest.split(split).count(), manifest.resolution(split));
    }
    let s = &manifest.load_split(Split::Test)?[0];
    println!("{}: partial {} points, complete {} points", s.id, s.partial.len(), s.complete.len());
    println!("dataset written to {}", out.display());
    Ok(())
}
