use std::f64::consts::LN_2;

use togsim_core::graspselect::SelectionConfig;
use togsim_core::neural::loss::LossConfig;
use togsim_core::neural::net::{ArchConfig, Heads, Theta, TogNetParams, TrunkPath};
use togsim_core::neural::policy::PolicyConfig;
use togsim_core::procgen::{generate_library, ProcGenConfig};
use togsim_core::rng::rng_from;
use togsim_core::selfsup::*;
use togsim_core::tasksim::{SimConfig, TaskKind};
use togsim_core::trainer::*;
use togsim_core::Error;

fn arch() -> ArchConfig {
    ArchConfig {
        crop_small: CROP_SMALL,
        crop_large: CROP_LARGE,
        ..ArchConfig::reduced()
    }
}

fn params(seed: u64) -> TogNetParams {
    TogNetParams::new(arch(), &mut rng_from(&[seed])).unwrap()
}

fn records(n: usize, task: TaskKind) -> (Vec<EpisodeRecord>, f64) {
    let lib = generate_library(21, 3, &ProcGenConfig::default()).unwrap();
    let sim = SimConfig {
        n_candidates: 30,
        ..SimConfig::default()
    };
    let sel = SelectionConfig::default();
    let pol = PolicyConfig::default();
    let ctx = CollectContext {
        library: &lib,
        sim: &sim,
        selection: &sel,
        policy: &pol,
        task,
    };
    let plan = CollectionPlan {
        trials_per_round: n,
        master_seed: 9,
        ..CollectionPlan::default()
    };
    (collect_stage0(&plan, &ctx).unwrap(), sim.camera.camera_height)
}

fn bits(p: &TogNetParams) -> Vec<u64> {
    p.values().iter().flatten().map(|v| v.to_bits()).collect()
}

fn group_bits(p: &TogNetParams, g: Theta) -> Vec<u64> {
    p.params_in(g).flat_map(|i| p.values()[i].iter().map(|v| v.to_bits())).collect()
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let (recs, bg) = records(8, TaskKind::Hammer);
    let mut p = params(1);
    let before = p.clone();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let rep = train(&mut p, &[&recs], bg, &cfg, Stage::Joint).unwrap();
    assert!(rep.trace.is_empty());
    assert_eq!(p, before);
}

#[test]
fn stage0_touches_only_the_grasp_group() {
    let (recs, bg) = records(16, TaskKind::Hammer);
    let mut p = params(2);
    let before = p.clone();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train(&mut p, &[&recs], bg, &cfg, Stage::Stage0).unwrap();
    assert_eq!(group_bits(&p, Theta::Task), group_bits(&before, Theta::Task));
    assert_eq!(group_bits(&p, Theta::Action), group_bits(&before, Theta::Action));
    assert_ne!(group_bits(&p, Theta::Grasp), group_bits(&before, Theta::Grasp));
    assert_eq!(p.bn_stats(TrunkPath::Large), before.bn_stats(TrunkPath::Large));
    assert_ne!(p.bn_stats(TrunkPath::Small), before.bn_stats(TrunkPath::Small));
}

#[test]
fn fixed_seed_gives_identical_parameter_bytes() {
    let (recs, bg) = records(12, TaskKind::Sweep);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut a = params(4);
    let mut b = params(4);
    let ra = train(&mut a, &[&recs], bg, &cfg, Stage::Joint).unwrap();
    let rb = train(&mut b, &[&recs], bg, &cfg, Stage::Joint).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ra, rb);
    let mut c = params(4);
    train(&mut c, &[&recs], bg, &TrainConfig { seed: 4, ..cfg }, Stage::Joint).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn memorizes_thirty_two_records() {
    let (recs, bg) = records(32, TaskKind::Hammer);
    let positives = recs.iter().filter(|r| r.s_g).count();
    assert!(positives > 0 && positives < 32, "need both classes, have {positives} successes");
    let mut p = params(5);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        balance_grasp: false,
        ..TrainConfig::default()
    };
    let rep = train(&mut p, &[&recs], bg, &cfg, Stage::Stage0).unwrap();
    let eval = evaluate_losses(&p, &recs, bg, &cfg.loss, Heads::GraspOnly).unwrap();
    assert_eq!(eval.accuracy_g, 1.0, "trace tail {:?}", rep.trace.last());
    // smoothed (window 3) stage-0 training loss never increases
    let smooth: Vec<f64> = rep.trace.windows(3).map(|w| w.iter().map(|e| e.loss_g).sum::<f64>() / 3.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "smoothed loss rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn balanced_batches_are_half_positive() {
    let labels: Vec<bool> = (0..200).map(|i| i % 10 == 0).collect();
    let cfg = TrainConfig {
        batch_size: 64,
        ..TrainConfig::default()
    };
    let batches = epoch_batches(&labels, &cfg, 0);
    assert_eq!(batches.len(), 4);
    assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), 200);
    for b in &batches {
        let pos = b.iter().filter(|&&i| labels[i]).count();
        assert!(pos.abs_diff(b.len() - pos) <= 1, "batch of {} has {pos} positives", b.len());
    }
    assert_eq!(batches, epoch_batches(&labels, &cfg, 0));
    assert_ne!(batches, epoch_batches(&labels, &cfg, 1));
}

#[test]
fn unbalanced_batches_are_a_permutation() {
    let labels = vec![false; 70];
    let cfg = TrainConfig {
        batch_size: 64,
        ..TrainConfig::default()
    };
    let mut all: Vec<usize> = epoch_batches(&labels, &cfg, 2).concat();
    all.sort_unstable();
    assert_eq!(all, (0..70).collect::<Vec<_>>());
}

#[test]
fn union_weights_the_newest_round_twice() {
    let (recs, _) = records(6, TaskKind::Hammer);
    let (old, new) = recs.split_at(2);
    let cfg = TrainConfig::default();
    let set = training_set(&[old, new], &cfg);
    assert_eq!(set.len(), 2 + 2 * 4);
    let newest_only = training_set(&[old, new], &TrainConfig { union_rounds: false, ..cfg.clone() });
    assert_eq!(newest_only.len(), 4);
    assert_eq!(training_set(&[new], &cfg).len(), 4);
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    // bias-corrected moments of a single gradient give m / sqrt(v) = sign(g)
    let mut p = params(6);
    let before = p.clone();
    let grads: Vec<Vec<f64>> = p.values().iter().map(|v| v.iter().enumerate().map(|(k, _)| if k % 2 == 0 { 0.3 } else { -2.0 }).collect()).collect();
    let cfg = TrainConfig::default();
    let idx: Vec<usize> = (0..p.values().len()).collect();
    let mut adam = Adam::new(&p);
    adam.step(&mut p, &grads, &idx, &cfg);
    for (a, b) in p.values().iter().zip(before.values()) {
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            let g: f64 = if k % 2 == 0 { 0.3 } else { -2.0 };
            let expect = y - 1e-3 * g / (g.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn non_finite_loss_aborts_with_batch_index() {
    let (recs, bg) = records(4, TaskKind::Hammer);
    let mut p = params(7);
    let i = p.index_of("grasp.head.b").unwrap();
    p.values_mut()[i][0] = f64::NAN;
    let err = train(&mut p, &[&recs], bg, &TrainConfig::default(), Stage::Stage0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { batch: 0, .. }), "{err:?}");
}

#[test]
fn f32_training_tracks_f64() {
    let (recs, bg) = records(8, TaskKind::Hammer);
    let base = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut a = params(8);
    let mut b = params(8);
    let ra = train(&mut a, &[&recs], bg, &base, Stage::Joint).unwrap();
    let rb = train(&mut b, &[&recs], bg, &TrainConfig { precision: Precision::F32, ..base }, Stage::Joint).unwrap();
    let (ea, eb) = (ra.trace[0], rb.trace[0]);
    assert!((ea.loss_g - eb.loss_g).abs() < 1e-4);
    assert!((ea.loss_pi - eb.loss_pi).abs() < 1e-3 * ea.loss_pi.max(1.0));
    let drift = a
        .values()
        .iter()
        .flatten()
        .zip(b.values().iter().flatten())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    // a single step moves every parameter by exactly lr, in either direction
    assert!(drift <= 2e-3 + 1e-12, "drift {drift}");
}

#[test]
fn constant_half_predictor_has_ln2_per_masked_sample() {
    let (recs, bg) = records(10, TaskKind::Hammer);
    let p = TogNetParams::new(ArchConfig { zero_heads: true, ..arch() }, &mut rng_from(&[1])).unwrap();
    let rep = evaluate_losses(&p, &recs, bg, &LossConfig::default(), Heads::All).unwrap();
    assert!((rep.loss_g - LN_2).abs() < 1e-12);
    if recs.iter().any(|r| r.s_g) {
        assert!((rep.loss_tg - LN_2).abs() < 1e-12);
    } else {
        assert!(rep.loss_tg.is_nan());
    }
}

#[test]
fn confident_correct_predictor_has_vanishing_loss() {
    let (mut recs, bg) = records(6, TaskKind::Sweep);
    for r in &mut recs {
        r.s_g = true;
        r.s_t = false;
    }
    let mut p = TogNetParams::new(ArchConfig { zero_heads: true, ..arch() }, &mut rng_from(&[1])).unwrap();
    let g = p.index_of("grasp.head.b").unwrap();
    let t = p.index_of("task.head.b").unwrap();
    p.values_mut()[g][0] = 40.0;
    p.values_mut()[t][0] = -40.0;
    let rep = evaluate_losses(&p, &recs, bg, &LossConfig::default(), Heads::All).unwrap();
    assert!(rep.loss_g < 1e-16 && rep.loss_tg < 1e-16);
    assert_eq!(rep.accuracy_g, 1.0);
    assert_eq!(rep.accuracy_tg, 1.0);
}

#[test]
fn evaluate_losses_does_not_mutate() {
    let (recs, bg) = records(4, TaskKind::Hammer);
    let p = params(9);
    let before = p.clone();
    evaluate_losses(&p, &recs, bg, &LossConfig::default(), Heads::All).unwrap();
    assert_eq!(p, before);
}

#[test]
fn calibration_bins_count_and_average() {
    let pred = [0.05, 0.07, 0.55, 0.95, 1.0];
    let truth = [false, true, true, true, false];
    let bins = calibration_bins(&pred, &truth, 10);
    assert_eq!(bins.len(), 10);
    assert_eq!(bins[0].count, 2);
    assert!((bins[0].mean_predicted - 0.06).abs() < 1e-12);
    assert_eq!(bins[0].empirical, 0.5);
    assert_eq!(bins[5].count, 1);
    assert_eq!(bins[9].count, 2);
    assert_eq!(bins[9].empirical, 0.5);
    assert!(bins[3].empirical.is_nan());
}

#[test]
fn trace_csv_parses_back() {
    let trace = vec![
        EpochLoss { epoch: 0, loss_g: 0.69, loss_tg: 0.5, loss_pi: 12.25 },
        EpochLoss { epoch: 1, loss_g: 0.6, loss_tg: 0.4, loss_pi: 3.0 },
    ];
    let csv = trace_csv(&trace);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,loss_g,loss_tg,loss_pi"));
    for (line, e) in lines.zip(&trace) {
        let f: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(f[0] as usize, e.epoch);
        assert!((f[1] - e.loss_g).abs() < 1e-9 && (f[3] - e.loss_pi).abs() < 1e-9);
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}
