use fbnet::checkpoint::Checkpoint;
use fbnet::data::{gen_dataset, GenConfig, Split};
use fbnet::model::{FbNet, InitStrategy, Profile};
use fbnet::params::ParamStore;
use fbnet::train::{ablate, evaluate, train, Suite, TrainConfig};

fn tiny_data(dir: &std::path::Path, train: usize) -> fbnet::data::DatasetManifest {
    let cfg = GenConfig { train, val: 2, test: 3, complete_points: 256, partial_points: 128, ..GenConfig::default() };
    gen_dataset(&cfg, dir).unwrap()
}

#[test]
fn untrained_model_scores_the_same_at_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_data(dir.path(), 1);
    let cfg = TrainConfig { profile: Profile::Tiny, init_strategy: InitStrategy::A, ..TrainConfig::default() };
    let model = cfg.model_config();
    let mut store = ParamStore::<f32>::new();
    FbNet::new(&mut store, &model, 0).unwrap();
    let ckpt = Checkpoint::from_store(&model, &store, 0, None, serde_json::to_value(&cfg).unwrap());
    let eval = evaluate(&ckpt, &manifest, Split::Test, None, cfg.tau).unwrap();
    assert_eq!(eval.rows.len(), 3);
    for t in 1..3 {
        assert_eq!(eval.rows[t].cd_l2, eval.rows[0].cd_l2);
        assert_eq!(eval.rows[t].f1, eval.rows[0].f1);
    }
}

#[test]
fn toy_loss_falls_over_twenty_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = GenConfig { train: 8, val: 2, test: 0, ..GenConfig::default() };
    let manifest = gen_dataset(&data, &dir.path().join("data")).unwrap();
    let cfg = TrainConfig {
        profile: Profile::Toy,
        seed: 0,
        epochs: 20,
        batch_size: 4,
        out_dir: dir.path().join("runs"),
        ..TrainConfig::default()
    };
    let out = train(&cfg, &manifest).unwrap();
    let (first, last) = (out.history[0].train_loss, out.history[19].train_loss);
    assert!(last < first, "epoch 20 loss {last} vs epoch 1 loss {first}");
}

#[test]
fn ablation_suites_emit_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_data(&dir.path().join("data"), 2);
    let base = TrainConfig {
        profile: Profile::Tiny,
        epochs: 1,
        batch_size: 2,
        out_dir: dir.path().join("runs"),
        ..TrainConfig::default()
    };
    let feedback = ablate(Suite::Feedback, &base, &manifest).unwrap();
    assert_eq!(feedback.len(), 5);
    let init = ablate(Suite::InitStrategy, &base, &manifest).unwrap();
    let ids: Vec<&str> = init.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids, ["strategy-A", "strategy-B", "strategy-C", "strategy-D", "strategy-E"]);
    assert_eq!(ablate(Suite::Pooling, &base, &manifest).unwrap().len(), 2);
    assert!(base.run_dir().join("ablation-init_strategy.csv").is_file());
    assert!(init.iter().chain(&feedback).all(|r| r.is_valid()));
}

#[test]
fn resolution_mismatch_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_data(dir.path(), 1);
    let cfg = TrainConfig { profile: Profile::Toy, out_dir: dir.path().join("runs"), ..TrainConfig::default() };
    assert!(matches!(train(&cfg, &manifest), Err(fbnet::Error::Config(_))));
    assert!(!dir.path().join("runs").exists());
}
