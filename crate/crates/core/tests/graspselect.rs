use proptest::prelude::*;
use togsim_core::graspselect::*;
use togsim_core::graspsim::{axis_angle_diff, GraspSpec};
use togsim_core::neural::*;
use togsim_core::procgen::{generate_tool, Family, ProcGenConfig};
use togsim_core::rng::rng_from;
use togsim_core::tasksim::{prepare_episode, EpisodeSeeds, SimConfig, TaskKind};

fn sg(index: usize, x: f64, y: f64, phi: f64, q_g: f64, q_tg: f64) -> ScoredGrasp {
    ScoredGrasp {
        index,
        grasp: GraspSpec::new(x, y, 0.01, phi, 0.03),
        q_g,
        q_tg,
        q_t: q_g * q_tg,
        action_mean: [0.0; 4],
        input: NetInput {
            crop_small: Vec::new(),
            crop_large: Vec::new(),
            z: 0.0,
        },
        task_oriented: false,
    }
}

/// Independent metric: planar distance plus weighted axis difference.
fn metric(a: &GraspSpec, b: &GraspSpec, w: f64) -> f64 {
    ((a.gx - b.gx).powi(2) + (a.gy - b.gy).powi(2)).sqrt() + w * axis_angle_diff(a.gphi, b.gphi)
}

#[test]
fn close_pair_keeps_the_higher_grasp_quality() {
    let cfg = SelectionConfig::default();
    let v = vec![sg(0, 0.0, 0.0, 0.3, 0.4, 0.5), sg(1, 0.001, 0.0, 0.3, 0.9, 0.5)];
    let kept = nms_filter(&v, &cfg);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].index, 1);
}

#[test]
fn well_separated_grasps_are_only_reordered() {
    let cfg = SelectionConfig::default();
    let v: Vec<ScoredGrasp> = (0..6).map(|i| sg(i, 0.1 * i as f64, 0.0, 0.0, [0.2, 0.9, 0.5, 0.9, 0.1, 0.7][i], 0.5)).collect();
    let kept: Vec<usize> = nms_filter(&v, &cfg).iter().map(|s| s.index).collect();
    assert_eq!(kept, vec![1, 3, 5, 2, 0, 4]);
}

#[test]
fn angle_term_separates_coincident_centers() {
    let cfg = SelectionConfig::default();
    // 0.02 m/rad × π/2 = 0.031 m > 0.025 m
    let v = vec![sg(0, 0.0, 0.0, 0.0, 0.5, 0.5), sg(1, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.5, 0.5)];
    assert_eq!(nms_filter(&v, &cfg).len(), 2);
    let v = vec![sg(0, 0.0, 0.0, 0.0, 0.5, 0.5), sg(1, 0.0, 0.0, 0.5, 0.5, 0.5)];
    assert_eq!(nms_filter(&v, &cfg).len(), 1);
}

#[test]
fn exhaustive_ties_and_joint_rescaling() {
    let v: Vec<ScoredGrasp> = (0..5).map(|i| sg(i, i as f64, 0.0, 0.0, 0.5, 0.5)).collect();
    assert_eq!(exhaustive_scored(&v, Objective::QT), 0);
    let v: Vec<ScoredGrasp> = [(0.9, 0.2), (0.6, 0.7), (0.5, 0.8), (0.3, 0.9)]
        .iter()
        .enumerate()
        .map(|(i, &(g, t))| sg(i, i as f64, 0.0, 0.0, g, t))
        .collect();
    assert_eq!(exhaustive_scored(&v, Objective::QT), 1);
    assert_eq!(exhaustive_scored(&v, Objective::QG), 0);
    let halved: Vec<ScoredGrasp> = v.iter().map(|s| sg(s.index, s.grasp.gx, 0.0, 0.0, 0.5 * s.q_g, s.q_tg)).collect();
    assert_eq!(exhaustive_scored(&halved, Objective::QT), 1);
}

#[test]
fn cem_on_a_single_candidate_returns_it() {
    let v = vec![sg(0, 0.1, 0.2, 0.3, 0.4, 0.5)];
    let r = cem_select_scored(&v, Objective::QT, &SelectionConfig::default(), &mut rng_from(&[1]));
    assert_eq!(r.best.index, 0);
}

#[test]
fn mixture_recovers_separated_clusters() {
    let mut rng = rng_from(&[4]);
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, 0.002).unwrap();
    let centers = [[0.0, 0.0, 0.5, 0.01], [0.1, 0.05, 1.5, 0.02], [-0.1, 0.08, 2.5, 0.0]];
    let pts: Vec<[f64; 4]> = (0..150)
        .map(|i| {
            let c = centers[i % 3];
            [c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng), c[2] + n.sample(&mut rng), c[3] + n.sample(&mut rng)]
        })
        .collect();
    // oracle: per-cluster sample means
    let want: Vec<[f64; 4]> = (0..3)
        .map(|c| {
            let mut m = [0.0; 4];
            for p in pts.iter().skip(c).step_by(3) {
                for d in 0..4 {
                    m[d] += p[d] / 50.0;
                }
            }
            m
        })
        .collect();
    let mix = fit_mixture(&pts, 3, 10, &mut rng_from(&[9]));
    for w in &want {
        let best = mix
            .means
            .iter()
            .map(|m| (0..4).map(|d| (m[d] - w[d]).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "cluster {w:?} not recovered: {:?}", mix.means);
    }
    assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn nms_diverse_is_uniform_over_survivors() {
    let cfg = SelectionConfig::default();
    let v: Vec<ScoredGrasp> = (0..5).map(|i| sg(i, 0.1 * i as f64, 0.0, 0.0, 0.5, 0.5)).collect();
    let mut rng = rng_from(&[3]);
    let n = 10_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        counts[nms_diverse_scored(&v, &cfg, &mut rng).index] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 0.2).abs() < 0.03, "{counts:?}");
    }
}

#[test]
fn task_oriented_flags_respect_floors() {
    let cfg = SelectionConfig {
        diagnostic_filter: true,
        ..SelectionConfig::default()
    };
    let mut v = vec![sg(0, 0.0, 0.0, 0.0, 0.6, 0.7), sg(1, 0.1, 0.0, 0.0, 0.4, 0.9), sg(2, 0.2, 0.0, 0.0, 0.9, 0.4)];
    flag_task_oriented(&mut v, &cfg);
    assert_eq!(v.iter().map(|s| s.task_oriented).collect::<Vec<_>>(), vec![true, false, false]);
    flag_task_oriented(&mut v, &SelectionConfig::default());
    assert!(v.iter().all(|s| !s.task_oriented));
}

#[test]
fn config_validation() {
    assert!(SelectionConfig::default().validate().is_ok());
    let bad = SelectionConfig {
        cem_elite_fraction: 1.0,
        ..SelectionConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad: Result<SelectionConfig, _> = serde_json::from_str(r#"{"nms_dist": 0.1}"#);
    assert!(bad.is_err());
}

fn scene(i: u64) -> (togsim_core::tasksim::PreparedEpisode, TogNetParams) {
    let tool = generate_tool(21, Family::T, i as usize, &ProcGenConfig::default()).unwrap();
    let prep = prepare_episode(&tool, TaskKind::Hammer, &EpisodeSeeds::derive(&[i]), &SimConfig::default()).unwrap();
    let arch = ArchConfig {
        zero_heads: false,
        ..ArchConfig::default()
    };
    (prep, TogNetParams::new(arch, &mut rng_from(&[i, 7])).unwrap())
}

#[test]
fn scoring_is_ordered_deterministic_and_factorized() {
    let (prep, p) = scene(1);
    let mut cands = prep.candidates[..4].to_vec();
    cands.push(cands[2].clone());
    let s = score_candidates(&p, &prep.obs, &cands).unwrap();
    assert_eq!(s.len(), 5);
    for (i, x) in s.iter().enumerate() {
        assert_eq!(x.index, i);
        assert_eq!(x.q_t, x.q_tg * x.q_g);
    }
    assert_eq!((s[4].q_g, s[4].q_tg), (s[2].q_g, s[2].q_tg));
    let one = score_candidates(&p, &prep.obs, &cands[..1]).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].q_g, s[0].q_g);
}

#[test]
fn cem_is_monotone_projected_and_near_the_oracle() {
    let cfg = SelectionConfig::default();
    for i in 0..3 {
        let (prep, p) = scene(10 + i);
        let scored = score_candidates(&p, &prep.obs, &prep.candidates).unwrap();
        let r = cem_select_scored(&scored, Objective::QT, &cfg, &mut rng_from(&[i]));
        assert_eq!(r.best_per_iteration.len(), cfg.cem_iterations + 1);
        assert!(r.best_per_iteration.windows(2).all(|w| w[1] >= w[0]));
        assert!(prep.candidates.contains(&r.best.grasp));
        let oracle = &scored[exhaustive_scored(&scored, Objective::QT)];
        assert!(r.best.q_t >= 0.95 * oracle.q_t);
        let agn = cem_select_scored(&scored, Objective::QG, &cfg, &mut rng_from(&[i]));
        let oracle_g = &scored[exhaustive_scored(&scored, Objective::QG)];
        assert!(agn.best.q_g >= 0.95 * oracle_g.q_g);
    }
}

#[test]
fn baselines_return_candidates() {
    let (prep, p) = scene(3);
    let cfg = SelectionConfig::default();
    let mut rng = rng_from(&[5]);
    for kind in [BaselineKind::AntipodalRandom, BaselineKind::TaskAgnostic, BaselineKind::NmsDiverse] {
        let g = baseline_grasp(kind, Some(&p), &prep.obs, &prep.candidates, &cfg, &mut rng).unwrap();
        assert_eq!(prep.candidates[g.index], g.grasp);
    }
    let one = baseline_grasp(BaselineKind::AntipodalRandom, None, &prep.obs, &prep.candidates[5..6], &cfg, &mut rng).unwrap();
    assert_eq!(one.grasp, prep.candidates[5]);
    assert!(baseline_grasp(BaselineKind::TaskAgnostic, None, &prep.obs, &prep.candidates, &cfg, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nms_survivors_are_pairwise_separated(pts in prop::collection::vec((-0.1f64..0.1, -0.1f64..0.1, 0.0f64..std::f64::consts::PI, 0.0f64..1.0), 1..60)) {
        let cfg = SelectionConfig::default();
        let v: Vec<ScoredGrasp> = pts.iter().enumerate().map(|(i, &(x, y, p, q))| sg(i, x, y, p, q, 0.5)).collect();
        let kept = nms_filter(&v, &cfg);
        prop_assert!(!kept.is_empty());
        for a in 0..kept.len() {
            for b in a + 1..kept.len() {
                prop_assert!(metric(&kept[a].grasp, &kept[b].grasp, cfg.nms_angle_weight) > cfg.nms_distance);
            }
        }
        // every suppressed grasp is near a kept grasp with at least its q_g
        for s in &v {
            if !kept.iter().any(|k| k.index == s.index) {
                prop_assert!(kept.iter().any(|k| k.q_g >= s.q_g && metric(&k.grasp, &s.grasp, cfg.nms_angle_weight) <= cfg.nms_distance));
            }
        }
    }

    #[test]
    fn cem_returns_a_pool_member_with_monotone_trace(pts in prop::collection::vec((-0.1f64..0.1, -0.1f64..0.1, 0.0f64..std::f64::consts::PI, 0.0f64..1.0, 0.0f64..1.0), 1..40), seed: u64) {
        let v: Vec<ScoredGrasp> = pts.iter().enumerate().map(|(i, &(x, y, p, g, t))| sg(i, x, y, p, g, t)).collect();
        let r = cem_select_scored(&v, Objective::QT, &SelectionConfig::default(), &mut rng_from(&[seed]));
        prop_assert!(r.best.index < v.len());
        prop_assert_eq!(&v[r.best.index].grasp, &r.best.grasp);
        prop_assert!(r.best_per_iteration.windows(2).all(|w| w[1] >= w[0]));
    }
}
