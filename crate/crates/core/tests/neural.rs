use proptest::prelude::*;
use togsim_core::neural::loss::{bce_logit, joint_loss_parts};
use togsim_core::neural::net::{forward_heads, random_input, ParamInfo};
use togsim_core::neural::*;
use togsim_core::rng::rng_from;

mod common;
use common::gradcheck;

fn labels(s_g: bool, s_t: bool, action: [f64; 4]) -> Labels {
    Labels { s_g, s_t, action }
}

fn reduced(seed: u64) -> TogNetParams {
    let mut rng = rng_from(&[seed]);
    let mut p = TogNetParams::new(ArchConfig::reduced(), &mut rng).unwrap();
    // non-trivial frozen statistics so the eval-mode check exercises them
    use rand::Rng;
    for path in [TrunkPath::Small, TrunkPath::Large] {
        for s in p.bn_stats_mut(path) {
            for m in &mut s.mean {
                *m = rng.random_range(-0.3..0.3);
            }
            for v in &mut s.var {
                *v = rng.random_range(0.5..2.0);
            }
        }
    }
    p
}

fn inputs(arch: &ArchConfig, n: usize, seed: u64) -> Vec<NetInput> {
    let mut rng = rng_from(&[seed, 1]);
    (0..n).map(|_| random_input(arch, &mut rng)).collect()
}

fn mixed_labels() -> Vec<Labels> {
    vec![
        labels(true, true, [0.02, -0.01, 0.03, 0.1]),
        labels(true, false, [0.0; 4]),
        labels(false, false, [0.0; 4]),
        labels(true, true, [-0.03, 0.04, -0.02, -0.2]),
    ]
}

#[test]
fn zero_heads_give_half_probabilities_and_zero_action() {
    let p = TogNetParams::new(ArchConfig::default(), &mut rng_from(&[3])).unwrap();
    let x = inputs(p.arch(), 2, 3);
    for o in forward(&p, &x).unwrap() {
        assert_eq!(o.q_g, 0.5);
        assert_eq!(o.q_tg, 0.5);
        assert_eq!(o.q_t, 0.25);
        assert_eq!(o.action_mean, [0.0; 4]);
    }
}

#[test]
fn parameter_budget_and_partition() {
    let p = TogNetParams::new(ArchConfig::default(), &mut rng_from(&[1])).unwrap();
    assert!(p.param_count() < 500_000, "{}", p.param_count());
    let total: usize = Theta::ALL.iter().map(|&g| p.group_count(g)).sum();
    assert_eq!(total, p.param_count());
    let mut names: Vec<&str> = p.infos().iter().map(|i: &ParamInfo| i.name.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), p.infos().len());
    assert!(p.infos().iter().filter(|i| i.name.starts_with("trunk.")).all(|i| i.group == Theta::Grasp));
}

#[test]
fn task_quality_is_the_exact_product() {
    let p = reduced(5);
    let x = inputs(p.arch(), 6, 5);
    for o in forward(&p, &x).unwrap() {
        assert_eq!(o.q_t, o.q_tg * o.q_g);
        assert!(o.q_t <= o.q_g.min(o.q_tg));
    }
}

#[test]
fn scaling_grasp_quality_keeps_the_argmax() {
    let p = reduced(6);
    let x = inputs(p.arch(), 20, 6);
    let out = forward(&p, &x).unwrap();
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let base: Vec<f64> = out.iter().map(|o| o.q_t).collect();
    for c in [1.0, 0.7, 0.1, 1e-3] {
        let scaled: Vec<f64> = out.iter().map(|o| o.q_tg * (c * o.q_g)).collect();
        assert_eq!(argmax(&scaled), argmax(&base));
    }
}

#[test]
fn eval_forward_is_deterministic_and_batch_invariant() {
    let p = reduced(7);
    let x = inputs(p.arch(), 5, 7);
    let twice = forward(&p, &[x[0].clone(), x[0].clone()]).unwrap();
    assert_eq!(twice[0], twice[1]);
    let batch = forward(&p, &x).unwrap();
    for (i, xi) in x.iter().enumerate() {
        let single = forward(&p, std::slice::from_ref(xi)).unwrap();
        let (a, b) = (single[0], batch[i]);
        assert!((a.logit_g - b.logit_g).abs() <= 1e-12 * (1.0 + a.logit_g.abs()));
        assert!((a.logit_tg - b.logit_tg).abs() <= 1e-12 * (1.0 + a.logit_tg.abs()));
        for k in 0..4 {
            assert!((a.action_mean[k] - b.action_mean[k]).abs() <= 1e-12);
        }
    }
    assert_eq!(forward(&p, &x).unwrap(), batch);
}

#[test]
fn grasp_only_forward_matches_full_grasp_head() {
    let p = reduced(8);
    let x = inputs(p.arch(), 3, 8);
    let full = forward(&p, &x).unwrap();
    let g = forward_heads(&p, &x, Heads::GraspOnly).unwrap();
    for (a, b) in full.iter().zip(&g) {
        assert_eq!(a.logit_g, b.logit_g);
    }
}

#[test]
fn shape_mismatch_names_the_layer() {
    let p = reduced(9);
    let mut x = inputs(p.arch(), 1, 9);
    x[0].crop_large.pop();
    let err = forward(&p, &x).unwrap_err().to_string();
    assert!(err.contains("input.crop_large"), "{err}");
}

#[test]
fn loss_closed_forms() {
    let cfg = LossConfig::default();
    // S_G = 0: only the grasp term
    let lg = 0.8;
    let v = joint_loss_parts(&[lg], Some(&[1.5]), Some(&[[0.3, 0.0, 0.0, 0.0]]), &[labels(false, false, [0.0; 4])], &cfg).unwrap();
    let q = 1.0 / (1.0 + (-lg).exp());
    assert!((v.total + (1.0 - q).ln()).abs() < 1e-12);
    assert_eq!((v.task, v.policy), (0.0, 0.0));
    // S_G = S_T = 1 and f = a
    let a = [0.01, 0.02, -0.01, 0.1];
    let (l1, l2) = (0.3, -0.4);
    let v = joint_loss_parts(&[l1], Some(&[l2]), Some(&[a]), &[labels(true, true, a)], &cfg).unwrap();
    let (q1, q2) = (1.0 / (1.0 + (-l1).exp()), 1.0 / (1.0 + (-l2).exp()));
    assert!((v.total - (-q1.ln() - q2.ln())).abs() < 1e-12);
    // q = 0.5, residual 0.01 on x with sigma 0.01
    let v = joint_loss_parts(&[0.0], Some(&[0.0]), Some(&[[0.01, 0.0, 0.0, 0.0]]), &[labels(true, true, [0.0; 4])], &cfg).unwrap();
    let want = 2.0 * std::f64::consts::LN_2 + 0.01f64.powi(2) / (2.0 * 0.01f64.powi(2));
    assert!((v.total - want).abs() < 1e-12, "{} vs {want}", v.total);
    assert!((v.total - (2.0 * std::f64::consts::LN_2 + 0.5)).abs() < 1e-12);
}

#[test]
fn constant_half_predictor_costs_ln2() {
    assert!((bce_logit(0.0, true) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((bce_logit(0.0, false) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(bce_logit(800.0, false).is_finite() && bce_logit(-800.0, true).is_finite());
}

#[test]
fn policy_mask_variant_uses_grasp_label() {
    let a = [[0.01, 0.0, 0.0, 0.0]];
    let y = [labels(true, false, [0.0; 4])];
    let eq = joint_loss_parts(&[0.0], Some(&[0.0]), Some(&a), &y, &LossConfig::default()).unwrap();
    assert_eq!(eq.policy, 0.0);
    let prose = LossConfig {
        policy_mask: PolicyMask::GraspSuccess,
        ..LossConfig::default()
    };
    let v = joint_loss_parts(&[0.0], Some(&[0.0]), Some(&a), &y, &prose).unwrap();
    assert!((v.policy - 0.5).abs() < 1e-12);
}

#[test]
fn entailment_violation_is_rejected() {
    let p = reduced(10);
    let x = inputs(p.arch(), 2, 10);
    let f = forward_tape::<f64>(&p, &x, Mode::Train, Heads::All).unwrap();
    let y = [labels(true, true, [0.0; 4]), labels(false, true, [0.0; 4])];
    let err = backward(&f, &y, &LossConfig::default(), &p).unwrap_err();
    assert!(matches!(err, togsim_core::Error::LabelEntailment { index: 1 }));
}

/// Central differences over every scalar parameter of the reduced network,
/// with the base point's rectifier pattern held fixed.
#[test]
fn analytic_gradients_match_central_differences() {
    let p = reduced(11);
    let x = inputs(p.arch(), 4, 11);
    let r = gradcheck::check(&p, &x, &mixed_labels(), &LossConfig::default(), 1e-4, 1e-4, true);
    assert_eq!(r.checked, p.param_count());
    assert!(r.max_rel < 1e-4, "max relative error {:e} at {}", r.max_rel, r.worst);
}

/// Without freezing, any disagreement must come from a ±h pass that switches
/// a rectifier.
#[test]
fn unfrozen_disagreements_are_all_kink_crossings() {
    let p = reduced(19);
    let x = inputs(p.arch(), 2, 19);
    let r = gradcheck::check(&p, &x, &mixed_labels()[..2], &LossConfig::default(), 1e-4, 1e-4, false);
    assert_eq!(r.smooth_failures, 0, "worst smooth parameter {}", r.worst);
    assert!(r.max_rel < 1e-4, "{:e} at {}", r.max_rel, r.worst);
}

#[test]
fn train_mode_batch_norm_gradients_match_central_differences() {
    // batch statistics couple samples; check a sample of trunk parameters
    let p = reduced(12);
    let x = inputs(p.arch(), 4, 12);
    let y = mixed_labels();
    let cfg = LossConfig::default();
    let loss = |q: &TogNetParams| {
        let f = forward_tape::<f64>(q, &x, Mode::Train, Heads::All).unwrap();
        joint_loss(&f, &y, &cfg).unwrap().total
    };
    let f = forward_tape::<f64>(&p, &x, Mode::Train, Heads::All).unwrap();
    let g = backward(&f, &y, &cfg, &p).unwrap();
    let h = 1e-4;
    for name in ["trunk.stem.w", "trunk.stem.gamma", "trunk.res1.b.beta", "trunk.down.w", "trunk.res2.a.gamma"] {
        let t = p.index_of(name).unwrap();
        for j in 0..p.values()[t].len().min(6) {
            let mut plus = p.clone();
            plus.values_mut()[t][j] += h;
            let mut minus = p.clone();
            minus.values_mut()[t][j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = g.values[t][j];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            assert!(rel < 1e-4, "{name}[{j}]: {analytic:e} vs {numeric:e}");
        }
    }
}

fn group_zero(p: &TogNetParams, g: &Gradients, group: Theta) -> bool {
    p.params_in(group).all(|i| g.values[i].iter().all(|&v| v == 0.0))
}

#[test]
fn masked_streams_get_exactly_zero_gradient() {
    let p = reduced(13);
    let x = inputs(p.arch(), 3, 13);
    let cfg = LossConfig::default();
    let none = vec![labels(false, false, [0.05, 0.0, 0.0, 0.0]); 3];
    let f = forward_tape::<f64>(&p, &x, Mode::Train, Heads::All).unwrap();
    let g = backward(&f, &none, &cfg, &p).unwrap();
    assert!(group_zero(&p, &g, Theta::Task));
    assert!(group_zero(&p, &g, Theta::Action));
    assert!(!group_zero(&p, &g, Theta::Grasp));
    // trunk gradient equals the grasp-only forward's
    let fg = forward_tape::<f64>(&p, &x, Mode::Train, Heads::GraspOnly).unwrap();
    let gg = backward(&fg, &none, &cfg, &p).unwrap();
    for i in p.params_in(Theta::Grasp) {
        assert_eq!(g.values[i], gg.values[i], "{}", p.infos()[i].name);
    }

    let grasped = vec![labels(true, false, [0.05, 0.0, 0.0, 0.0]); 3];
    let g = backward(&f, &grasped, &cfg, &p).unwrap();
    assert!(!group_zero(&p, &g, Theta::Task));
    assert!(group_zero(&p, &g, Theta::Action));
}

#[test]
fn duplicated_batch_leaves_the_mean_gradient_unchanged() {
    let p = reduced(14);
    let x = inputs(p.arch(), 2, 14);
    let y = vec![labels(true, true, [0.01, 0.0, -0.02, 0.05]), labels(false, false, [0.0; 4])];
    let cfg = LossConfig::default();
    let f = forward_tape::<f64>(&p, &x, Mode::Train, Heads::All).unwrap();
    let g1 = backward(&f, &y, &cfg, &p).unwrap();
    let x2: Vec<NetInput> = x.iter().chain(&x).cloned().collect();
    let y2: Vec<Labels> = y.iter().chain(&y).copied().collect();
    let f2 = forward_tape::<f64>(&p, &x2, Mode::Train, Heads::All).unwrap();
    let g2 = backward(&f2, &y2, &cfg, &p).unwrap();
    for (a, b) in g1.values.iter().flatten().zip(g2.values.iter().flatten()) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn running_statistics_follow_batch_statistics() {
    let mut p = reduced(15);
    let x = inputs(p.arch(), 4, 15);
    let f = forward_tape::<f64>(&p, &x, Mode::Train, Heads::All).unwrap();
    let before = p.bn_stats(TrunkPath::Small)[0].clone();
    p.update_running(TrunkPath::Small, &f.stats[0], 0.1);
    let s = &f.stats[0][0];
    let after = &p.bn_stats(TrunkPath::Small)[0];
    let unbias = s.count as f64 / (s.count - 1) as f64;
    for c in 0..s.mean.len() {
        assert!((after.mean[c] - (0.9 * before.mean[c] + 0.1 * s.mean[c])).abs() < 1e-15);
        assert!((after.var[c] - (0.9 * before.var[c] + 0.1 * s.var[c] * unbias)).abs() < 1e-15);
    }
    assert_eq!(p.bn_stats(TrunkPath::Large), reduced(15).bn_stats(TrunkPath::Large));
}

#[test]
fn policy_degenerate_mode_and_spread() {
    let out = NetOutput {
        q_g: 0.5,
        q_tg: 0.5,
        q_t: 0.25,
        action_mean: [0.01, -0.02, 0.0, 0.1],
        logit_g: 0.0,
        logit_tg: 0.0,
    };
    let tiny = PolicyConfig { sigma: [1e-12; 4] };
    let s = sample_action(&out, &tiny, &mut rng_from(&[1]));
    for k in 0..4 {
        assert!((s.raw[k] - out.action_mean[k]).abs() < 1e-9);
    }
    let cfg = PolicyConfig::default();
    let want: f64 = cfg.sigma.iter().map(|s| -0.5 * (2.0 * std::f64::consts::PI * s * s).ln()).sum();
    assert!((log_density(&out, &out.action_mean, &cfg) - want).abs() < 1e-12);

    let mut rng = rng_from(&[2]);
    let n = 10_000;
    let draws: Vec<[f64; 4]> = (0..n).map(|_| sample_action(&out, &cfg, &mut rng).raw).collect();
    for k in 0..4 {
        let mean = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let rel = (var.sqrt() - cfg.sigma[k]).abs() / cfg.sigma[k];
        assert!(rel < 0.03, "dim {k}: std {} vs {}", var.sqrt(), cfg.sigma[k]);
    }
    let wide = PolicyConfig { sigma: [1.0; 4] };
    let a = sample_action(&out, &wide, &mut rng).action.to_array();
    assert!(a[..3].iter().all(|v| v.abs() <= 0.08) && a[3].abs() <= std::f64::consts::FRAC_PI_8);
}

#[test]
fn params_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    let mut p = reduced(16);
    let x = inputs(p.arch(), 3, 16);
    let f = forward_tape::<f64>(&p, &x, Mode::Train, Heads::All).unwrap();
    p.update_running(TrunkPath::Large, &f.stats[1], 0.37);
    save_params(&p, &path).unwrap();
    let q = load_params(&path).unwrap();
    assert_eq!(p, q);
    assert_eq!(forward(&p, &x).unwrap(), forward(&q, &x).unwrap());
    let q = load_params_for(&path, &ArchConfig::reduced()).unwrap();
    assert_eq!(p, q);
}

#[test]
fn truncated_payload_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    save_params(&reduced(17), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_params(&path), Err(togsim_core::Error::Format { .. })));
}

#[test]
fn mismatched_architecture_is_a_hash_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    save_params(&reduced(18), &path).unwrap();
    let err = load_params_for(&path, &ArchConfig::default()).unwrap_err();
    assert!(matches!(err, togsim_core::Error::HashMismatch { .. }), "{err}");
    // a header whose hash does not match its own architecture
    let text = std::fs::read(&path).unwrap();
    let split = text.iter().position(|&b| b == b'\n').unwrap();
    let header = String::from_utf8(text[..split].to_vec()).unwrap().replace("\"hidden\":8", "\"hidden\":9");
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&text[split..]);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_params(&path), Err(togsim_core::Error::HashMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_stay_in_range(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let p = reduced(seed);
        let mut x = inputs(p.arch(), 2, seed);
        for xi in &mut x {
            xi.crop_large.iter_mut().for_each(|v| *v *= scale);
            xi.crop_small.iter_mut().for_each(|v| *v *= scale);
            xi.z *= scale;
        }
        for o in forward(&p, &x).unwrap() {
            prop_assert!((0.0..=1.0).contains(&o.q_g) && (0.0..=1.0).contains(&o.q_tg));
            prop_assert_eq!(o.q_t, o.q_tg * o.q_g);
            for (a, s) in o.action_mean.iter().zip(p.arch().action_scale) {
                prop_assert!(a.abs() <= s);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_masks_hold(lg in -30.0f64..30.0, ltg in -30.0f64..30.0, sg: bool, st: bool, d in -0.1f64..0.1) {
        let st = st && sg;
        let v = joint_loss_parts(&[lg], Some(&[ltg]), Some(&[[d, 0.0, 0.0, 0.0]]), &[labels(sg, st, [0.0; 4])], &LossConfig::default()).unwrap();
        prop_assert!(v.grasp >= 0.0 && v.task >= 0.0 && v.policy >= 0.0);
        if !sg { prop_assert_eq!(v.task, 0.0); }
        if !st { prop_assert_eq!(v.policy, 0.0); }
    }
}
