use std::fs;

use super::*;
use crate::error::Error;
use crate::wm::apply_trigger;

#[test]
fn toml_round_trip_and_defaults() {
    let cfg = ExperimentConfig::desk();
    let text = cfg.to_toml().unwrap();
    let back = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    let partial = ExperimentConfig::from_toml("seed = 7\n[embed]\nsteps = 10\n").unwrap();
    assert_eq!(partial.seed, 7);
    assert_eq!(partial.embed.steps, 10);
    assert_eq!(partial.data, DataConfig::default());
}

#[test]
fn hash_ignores_key_order() {
    let a = ExperimentConfig::from_toml("seed = 3\nname = \"x\"\n[data]\ntrain = 100\nshadow = 50\n").unwrap();
    let b = ExperimentConfig::from_toml("name = \"x\"\nseed = 3\n[data]\nshadow = 50\ntrain = 100\n").unwrap();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    let c = ExperimentConfig::from_toml("name = \"x\"\nseed = 4\n").unwrap();
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn unresolved_references_are_rejected() {
    let mut cfg = ExperimentConfig::smoke();
    cfg.steal[0].query_dataset = "nowhere".into();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = ExperimentConfig::smoke();
    cfg.trials.attacks.push("steal-9".into());
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = ExperimentConfig::smoke();
    cfg.removal.surrogate = "missing".into();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = ExperimentConfig::smoke();
    cfg.steal.push(cfg.steal[0].clone());
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert!(ExperimentConfig::from_toml("seed = \"x\"").is_err());
}

#[test]
fn splits_are_seeded_and_disjoint() {
    let cfg = ExperimentConfig::smoke();
    let a = build_splits(&cfg.data, &seed_everything(1)).unwrap();
    let b = build_splits(&cfg.data, &seed_everything(1)).unwrap();
    let c = build_splits(&cfg.data, &seed_everything(2)).unwrap();
    for name in SPLITS {
        assert_eq!(a.get(name).unwrap().images(), b.get(name).unwrap().images());
    }
    assert_ne!(a.get("train").unwrap().images()[0], c.get("train").unwrap().images()[0]);
    let train = a.get("train").unwrap();
    let private = a.get("private").unwrap();
    assert!(private.images().iter().all(|p| !train.images().contains(p)));
    assert_eq!(a.get("shifted").unwrap().len(), cfg.data.shifted);
}

#[test]
fn cifar_source_needs_a_directory() {
    let mut cfg = DataConfig {
        source: DataSource::Cifar10,
        ..DataConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    cfg.dir = Some(dir.path().to_path_buf());
    // no batches on disk
    assert!(build_splits(&cfg, &seed_everything(0)).is_err());
}

#[test]
fn run_directories_are_append_only() {
    let root = tempfile::tempdir().unwrap();
    let a = RunDir::create(root.path(), "embed", "0123456789abcdef", 0).unwrap();
    let b = RunDir::create(root.path(), "embed", "0123456789abcdef", 0).unwrap();
    assert_ne!(a.path, b.path);
    a.write("x.txt", b"hello").unwrap();
    assert!(RunDir::at(&a.path, "embed", "h", 0).is_err());
}

#[test]
fn manifest_detects_tampering() {
    let root = tempfile::tempdir().unwrap();
    let run = RunDir::at(&root.path().join("r"), "report", "abc", 1).unwrap();
    run.write("tables/t.csv", b"a,b\n1,2\n").unwrap();
    let m = run.finish().unwrap();
    assert_eq!(m.artifacts.len(), 1);
    assert_eq!(verify_run(&run.path).unwrap(), m);
    fs::write(run.join("tables/t.csv"), b"a,b\n1,3\n").unwrap();
    match verify_run(&run.path) {
        Err(Error::Integrity { field, .. }) => assert_eq!(field, "tables/t.csv"),
        other => panic!("expected integrity error, got {other:?}"),
    }
}

#[test]
fn private_images_accept_the_trigger() {
    let cfg = ExperimentConfig::smoke();
    let splits = build_splits(&cfg.data, &seed_everything(0)).unwrap();
    let t = crate::wm::Trigger::random((32, 32, 3), 0);
    let m = crate::wm::make_mask((32, 32, 3), 0.35).unwrap();
    for im in splits.get("private").unwrap().images() {
        apply_trigger(im, &t, &m).unwrap();
    }
}
