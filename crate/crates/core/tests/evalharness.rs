use togsim_core::evalharness::*;
use togsim_core::graspselect::SelectionConfig;
use togsim_core::graspsim::GraspSpec;
use togsim_core::neural::net::{ArchConfig, TogNetParams};
use togsim_core::procgen::{generate_library, Family, ProcGenConfig, ToolLibrary};
use togsim_core::rng::rng_from;
use togsim_core::selfsup::{CROP_LARGE, CROP_SMALL};
use togsim_core::tasksim::{prepare_episode, EpisodeSeeds, SimConfig, TaskKind};

fn params() -> TogNetParams {
    let arch = ArchConfig {
        crop_small: CROP_SMALL,
        crop_large: CROP_LARGE,
        ..ArchConfig::reduced()
    };
    TogNetParams::new(arch, &mut rng_from(&[17])).unwrap()
}

fn heldout() -> ToolLibrary {
    generate_library(1001, 2, &ProcGenConfig::default()).unwrap()
}

fn sim() -> SimConfig {
    SimConfig {
        n_candidates: 40,
        ..SimConfig::default()
    }
}

fn spec(task: TaskKind, n: usize) -> EvalSpec {
    EvalSpec {
        task,
        episodes_per_method: n,
        seed: 3,
        ..EvalSpec::default()
    }
}

fn run(s: &EvalSpec) -> EvalReport {
    run_eval(s, &params(), &heldout(), &sim(), &SelectionConfig::default()).unwrap()
}

#[test]
fn one_episode_rates_are_zero_or_one() {
    let r = run(&spec(TaskKind::Hammer, 1));
    assert_eq!(r.methods.len(), 5);
    for m in &r.methods {
        assert_eq!(m.overall.episodes, 1);
        assert!(m.overall.rate == 0.0 || m.overall.rate == 1.0);
        assert_eq!(m.families.values().map(|f| f.episodes).sum::<usize>(), 1);
    }
}

#[test]
fn report_is_deterministic_and_paired() {
    let s = spec(TaskKind::Sweep, 6);
    let a = run(&s);
    let b = run(&s);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_report(&a, &pa).unwrap();
    write_report(&b, &pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(std::fs::read(pa.with_extension("json")).unwrap(), std::fs::read(pb.with_extension("json")).unwrap());

    for e in 0..6u64 {
        let eps: Vec<&EpisodeOutcome> = a.outcomes.iter().filter(|o| o.episode == e).collect();
        assert_eq!(eps.len(), 5);
        assert!(eps.iter().all(|o| o.tool_id == eps[0].tool_id));
        let of = |m: Method| eps.iter().find(|o| o.method == m).unwrap();
        // same selector, different action source
        assert_eq!(of(Method::TaskOriRandom).grasp, of(Method::Ours).grasp);
        assert_eq!(of(Method::TaskAgnRandom).grasp, of(Method::TaskAgnTrained).grasp);
        assert_eq!(of(Method::TaskOriRandom).action, of(Method::AntipodalRandom).action);
    }
}

#[test]
fn counts_and_family_weighting() {
    let r = run(&spec(TaskKind::Hammer, 8));
    for m in &r.methods {
        assert_eq!(m.overall.episodes, 8);
        assert_eq!(m.families.values().map(|f| f.successes).sum::<usize>(), m.overall.successes);
        let weighted: f64 = m.families.values().filter(|f| f.episodes > 0).map(|f| f.rate * f.episodes as f64).sum::<f64>() / 8.0;
        assert!((weighted - m.overall.rate).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&m.overall.rate));
        assert_eq!(m.task_failures.values().sum::<usize>(), 8);
        assert!(m.overall.ci_low <= m.overall.rate && m.overall.rate <= m.overall.ci_high);
    }
    assert_eq!(r.paired.len(), 4);
    for o in &r.outcomes {
        assert!(o.s_g || !o.s_t);
    }
}

#[test]
fn csv_has_twenty_recomputable_rows() {
    let r = run(&spec(TaskKind::Hammer, 3));
    let csv = report_csv(&r);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 20);
    for row in &rows {
        assert_eq!(row.len(), 8);
        assert_eq!(row[1], "hammer");
        let episodes: usize = row[3].parse().unwrap();
        let successes: usize = row[4].parse().unwrap();
        let rate: f64 = row[5].parse().unwrap();
        if episodes > 0 {
            assert!((rate - successes as f64 / episodes as f64).abs() < 1e-6);
        }
        let lo: f64 = row[6].parse().unwrap();
        let hi: f64 = row[7].parse().unwrap();
        assert!(lo <= hi);
    }
    let fams: Vec<&str> = rows.iter().take(4).map(|r| r[2].as_str()).collect();
    assert_eq!(fams, ["T", "L", "X", "all"]);
}

#[test]
fn baseline_only_spec_needs_no_scores() {
    let s = EvalSpec {
        methods: vec![Method::AntipodalRandom],
        ..spec(TaskKind::Sweep, 4)
    };
    let r = run(&s);
    assert_eq!(r.methods.len(), 1);
    assert!(r.paired.is_empty());
}

#[test]
fn wilson_interval_matches_tabulated_values() {
    let (lo, hi) = wilson_interval(5, 10, 0.95);
    assert!((lo - 0.2366).abs() < 1e-4 && (hi - 0.7634).abs() < 1e-4);
    let (lo, hi) = wilson_interval(0, 10, 0.95);
    assert!(lo.abs() < 1e-12 && (hi - 0.2775).abs() < 1e-4);
    let (lo, hi) = wilson_interval(10, 10, 0.95);
    assert!((lo - 0.7225).abs() < 1e-4 && (hi - 1.0).abs() < 1e-12);
}

#[test]
fn mcnemar_exact_closed_forms() {
    // two-sided: 2 * P(Bin(n, 1/2) <= min)
    assert!((mcnemar_exact(0, 5) - 2.0 / 32.0).abs() < 1e-12);
    assert!((mcnemar_exact(9, 1) - 2.0 * 11.0 / 1024.0).abs() < 1e-12);
    assert_eq!(mcnemar_exact(3, 3), 1.0);
    assert_eq!(mcnemar_exact(0, 0), 1.0);
}

#[test]
fn distance_stats_oracle() {
    let d = DistanceStats::of(&[4.0, 1.0, 3.0, 2.0]);
    assert_eq!(d.count, 4);
    assert_eq!(d.mean, 2.5);
    assert_eq!(d.median, 2.5);
    assert!((d.std - 1.25f64.sqrt()).abs() < 1e-12);
    assert!(DistanceStats::of(&[]).mean.is_nan());
}

#[test]
fn heldout_must_be_disjoint() {
    let train = generate_library(5, 1, &ProcGenConfig::default()).unwrap();
    assert!(check_heldout(&train, &heldout()).is_ok());
    assert!(check_heldout(&train, &train).is_err());
}

#[test]
fn spec_validation() {
    assert!(EvalSpec { methods: vec![], ..EvalSpec::default() }.validate().is_err());
    assert!(EvalSpec { methods: vec![Method::Ours, Method::Ours], ..EvalSpec::default() }.validate().is_err());
    assert!(EvalSpec { episodes_per_method: 0, ..EvalSpec::default() }.validate().is_err());
}

#[test]
fn audit_reports_one_row_per_tool_with_candidates() {
    let lib = heldout();
    let tools: Vec<_> = lib.tools.iter().filter(|t| t.family == Family::T).collect();
    let rows = qualitative_grasp_audit(&params(), &tools, TaskKind::Hammer, &sim(), 1).unwrap();
    assert!(!rows.is_empty() && rows.len() <= tools.len());
    for r in &rows {
        assert!(r.agnostic_com >= 0.0 && r.oriented_bulky >= 0.0);
    }
}

#[test]
fn audit_fraction_counts_strict_direction() {
    let g = GraspSpec::new(0.0, 0.0, 0.01, 0.0, 0.03);
    let row = |a: f64, o: f64| AuditRow {
        tool_id: "t".into(),
        family: Family::T,
        agnostic: g.clone(),
        oriented: g.clone(),
        agnostic_com: 0.0,
        oriented_com: 0.0,
        agnostic_bulky: a,
        oriented_bulky: o,
    };
    let rows = [row(0.1, 0.2), row(0.2, 0.1), row(0.1, 0.1), row(0.0, 0.3)];
    assert_eq!(audit_fraction(&rows, true), 0.5);
    assert_eq!(audit_fraction(&rows, false), 0.25);
}

#[test]
fn overlay_marks_the_grasp_center() {
    let lib = heldout();
    let s = sim();
    let prep = prepare_episode(&lib.tools[0], TaskKind::Hammer, &EpisodeSeeds::derive(&[1]), &s).unwrap();
    let g = prep.candidates[0].clone();
    let img = grasp_overlay(&prep.obs, std::slice::from_ref(&g), 0.04, u16::MAX);
    let (r, c) = prep.obs.world_to_pixel(g.center());
    let n = prep.obs.size();
    let near = (-1i64..=1).any(|dr| {
        (-1i64..=1).any(|dc| {
            let (rr, cc) = (r.round() as i64 + dr, c.round() as i64 + dc);
            rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n && img[rr as usize * n + cc as usize] == u16::MAX
        })
    });
    assert!(near);
}
