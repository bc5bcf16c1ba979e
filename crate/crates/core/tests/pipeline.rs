use std::fs;
use std::path::Path;

use togsim_core::pipeline::*;
use togsim_core::tasksim::TaskKind;
use togsim_core::Error;

const TINY: &str = r#"{
    "master_seed": 5,
    "tasks": ["hammer"],
    "library": {"train_per_family": 2, "heldout_per_family": 1},
    "sim": {"n_candidates": 30},
    "selection": {"n_candidates": 30, "cem_resample": 10},
    "arch": {"trunk_channels": [8, 8], "bottleneck": 4, "pool_to": 4, "z_embed": 4, "hidden": 8},
    "collection": {"rounds": 1, "trials_per_round": 12},
    "train": {"epochs": 1, "batch_size": 8},
    "eval": {"episodes_per_method": 3},
    "audit_tools": 1
}"#;

fn tiny() -> RunConfig {
    RunConfig::from_json(TINY.as_bytes(), Path::new("tiny.json")).unwrap()
}

#[test]
fn unknown_key_is_named() {
    let e = RunConfig::from_json(br#"{"train": {"epochz": 3}}"#, Path::new("c.json")).unwrap_err();
    match e {
        Error::Config { field, .. } => assert_eq!(field, "epochz"),
        other => panic!("{other}"),
    }
}

#[test]
fn effective_config_round_trips_and_hash_is_stable() {
    let a = tiny().effective();
    let back = RunConfig::from_json(&a.to_json(), Path::new("eff.json")).unwrap();
    assert_eq!(a, back);
    assert_eq!(a.hash(), back.hash());
    assert_eq!(a.hash(), tiny().effective().hash());
    let mut b = tiny();
    b.master_seed = 6;
    assert_ne!(a.hash(), b.effective().hash());
    assert_ne!(a.collection.master_seed, a.train.seed);
}

#[test]
fn mismatched_candidate_counts_rejected() {
    let mut c = tiny().effective();
    c.selection.n_candidates = 31;
    assert!(matches!(c.validate(), Err(Error::Config { .. })));
}

#[test]
fn stage_without_prerequisite_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    assert!(matches!(p.collect(TaskKind::Hammer, 0), Err(Error::MissingPrerequisite { .. })));
    p.gen().unwrap();
    assert!(matches!(p.train(TaskKind::Hammer, 0), Err(Error::MissingPrerequisite { .. })));
}

#[test]
fn artifacts_from_another_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(tiny(), dir.path()).unwrap().gen().unwrap();
    let mut other = tiny();
    other.master_seed = 99;
    let p = Pipeline::new(other, dir.path()).unwrap();
    assert!(matches!(p.collect(TaskKind::Hammer, 0), Err(Error::HashMismatch { .. })));
}

#[test]
fn tampered_artifact_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    p.gen().unwrap();
    let lp = p.library_path();
    let mut bytes = fs::read(&lp).unwrap();
    bytes.push(b' ');
    fs::write(&lp, bytes).unwrap();
    assert!(matches!(p.load_library(), Err(Error::HashMismatch { .. })));
}

#[test]
fn full_run_is_resumable_and_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    let s = p.run_all().unwrap();
    assert_eq!(s.tasks.len(), 1);
    assert_eq!(s.tasks[0].rates.len(), 5);
    for r in 0..=1 {
        assert!(p.dataset_path(TaskKind::Hammer, r).exists());
        assert!(p.checkpoint_path(TaskKind::Hammer, r).exists());
    }
    let csv = fs::read_to_string(p.report_path(TaskKind::Hammer)).unwrap();
    assert_eq!(csv.lines().count(), 21);

    // second run reuses every artifact untouched
    let stamp = |path: &Path| fs::metadata(path).unwrap().modified().unwrap();
    let before = stamp(&p.checkpoint_path(TaskKind::Hammer, 1));
    let again = Pipeline::new(tiny(), dir.path()).unwrap().run_all().unwrap();
    assert_eq!(s, again);
    assert_eq!(before, stamp(&p.checkpoint_path(TaskKind::Hammer, 1)));

    let recs = p.load_dataset(TaskKind::Hammer, 1).unwrap();
    let rec = recs.iter().find(|r| !r.no_candidates).unwrap();
    let out = p.inspect(TaskKind::Hammer, 1, rec.episode_index, &dir.path().join("ep")).unwrap();
    assert!(out.grasp_image.exists() && out.task_image.exists());
    assert_eq!((out.s_g, out.s_t), (rec.s_g, rec.s_t));
    let (r, c) = out.grasp_pixel;
    assert!((0.0..128.0).contains(&r) && (0.0..128.0).contains(&c));
}
