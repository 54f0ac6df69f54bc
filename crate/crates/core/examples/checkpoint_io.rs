//! Saves a freshly initialized model, reloads it and checks the parameters.
use fbnet::checkpoint::Checkpoint;
use fbnet::model::{FbNet, Profile};
use fbnet::optim::Adam;
use fbnet::params::ParamStore;

fn main() -> fbnet::Result<()> {
    let cfg = Profile::Tiny.config();
    let mut store = ParamStore::<f32>::new();
    FbNet::new(&mut store, &cfg, 7)?;
    let adam = Adam::new(&store, 0.9, 0.999);
    let ckpt = Checkpoint::from_store(&cfg, &store, 0, Some(&adam), serde_json::Value::Null);
    let path = std::env::temp_dir().join("fbnet-example.ckpt");
    ckpt.save(&path)?;

    let back = Checkpoint::load(&path)?;
    let (_, restored) = back.build_model::<f32>()?;
    let same = store.iter().zip(restored.iter()).all(|((_, a), (_, b))| a.value == b.value);
    println!("{} arrays, {} scalars, identical after reload: {same}", back.meta.params.len(), back.num_params());
    Ok(())
}
