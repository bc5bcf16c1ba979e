use togsim_core::geometry::mass_properties;
use togsim_core::procgen::{
    classify_family, generate_library, sample_primitive_polygon, Family, PrimitiveKind, ProcGenConfig, ToolLibrary,
    TOOL_BOUND,
};
use togsim_core::rng::rng_from;

#[test]
fn library_is_deterministic_and_round_trips() {
    let cfg = ProcGenConfig::default();
    let a = generate_library(7, 4, &cfg).unwrap();
    let b = generate_library(7, 4, &cfg).unwrap();
    assert_eq!(a.to_json_bytes(), b.to_json_bytes());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lib.json");
    a.save(&path).unwrap();
    let loaded = ToolLibrary::load(&path).unwrap();
    assert_eq!(loaded, a);
    assert_eq!(loaded.hash(), a.hash());
    assert_ne!(generate_library(8, 4, &cfg).unwrap().hash(), a.hash());
}

#[test]
fn count_per_family() {
    let lib = generate_library(1, 2, &ProcGenConfig::default()).unwrap();
    assert_eq!(lib.len(), 6);
    for fam in Family::ALL {
        assert_eq!(lib.tools.iter().filter(|t| t.family == fam).count(), 2);
    }
    assert_eq!(lib.tools[0].id, "T-0-1");
    assert!(generate_library(1, 0, &ProcGenConfig::default()).is_err());
}

#[test]
fn construction_audit_over_a_thousand_tools() {
    let cfg = ProcGenConfig::default();
    let lib = generate_library(2024, 334, &cfg).unwrap();
    // interval bounds on mass from the config ranges alone
    let smallest_part = 0.3 * (cfg.part_extent_range[0] * cfg.min_aspect) * cfg.part_extent_range[0];
    let worst_shrink = TOOL_BOUND / (cfg.part_extent_range[1] + cfg.max_short_extent);
    let m_lo = cfg.density_range[0] * smallest_part * worst_shrink.powi(2) * cfg.height_range[0];
    let m_hi = cfg.density_range[1] * TOOL_BOUND * TOOL_BOUND * cfg.height_range[1];
    for t in &lib.tools {
        assert_eq!(classify_family(&t.shape), Some(t.family), "{}", t.id);
        let [a, b] = t.shape.parts();
        assert!(a.intersection_area(b) > 0.0);
        let m = mass_properties(&t.shape);
        assert!(m.mass > m_lo && m.mass < m_hi, "{} mass {}", t.id, m.mass);
        assert!(m.inertia_z > 0.0);
        let (lo, hi) = t.shape.bounds();
        assert!(hi.x - lo.x <= TOOL_BOUND && hi.y - lo.y <= TOOL_BOUND);
    }
}

#[test]
fn primitive_branches_are_uniform() {
    let cfg = ProcGenConfig::default();
    let mut rng = rng_from(&[99]);
    let mut counts = [0usize; 3];
    for _ in 0..1000 {
        let p = sample_primitive_polygon(&mut rng, &cfg).unwrap();
        let i = PrimitiveKind::ALL.iter().position(|k| *k == p.kind).unwrap();
        counts[i] += 1;
    }
    for c in counts {
        let f = c as f64 / 1000.0;
        assert!((f - 1.0 / 3.0).abs() <= 0.05, "{counts:?}");
    }
}
