//! Procedural two-part tools in the T, L and X families.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mass_properties, CompositeShape, ConvexPolygon, MassProperties, Vec2};
use crate::rng::{fnv_1a, rng_from, tag, Rng};

/// Largest side of a tool's body-frame bounding box.
pub const TOOL_BOUND: f64 = 0.26;
/// Minimum penetration of part B into part A along the junction.
pub const MIN_JUNCTION_OVERLAP: f64 = 0.002;
const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    T,
    L,
    X,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::T, Family::L, Family::X];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::T => "T",
            Family::L => "L",
            Family::X => "X",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(Family::T),
            "L" => Ok(Family::L),
            "X" => Ok(Family::X),
            other => Err(Error::Generation(format!("unknown tool family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcGenConfig {
    pub part_vertex_count_range: [usize; 2],
    pub part_extent_range: [f64; 2],
    /// Upper bound on a part's short extent, so every part fits between the fingers.
    pub max_short_extent: f64,
    /// Lower bound on a part's long extent (within `part_extent_range`).
    pub min_long_extent: f64,
    pub min_aspect: f64,
    pub ngon_sides_range: [usize; 2],
    pub height_range: [f64; 2],
    pub density_range: [f64; 2],
    pub friction_range: [f64; 2],
    /// Extra penetration of B into A beyond the 2 mm minimum.
    pub junction_overlap_range: [f64; 2],
    /// Relative offset of an X crossing from both midpoints.
    pub x_offset_fraction: f64,
    /// Deviation from perpendicular between the two parts (radians).
    pub bend_jitter: f64,
}

impl Default for ProcGenConfig {
    fn default() -> Self {
        ProcGenConfig {
            part_vertex_count_range: [3, 8],
            part_extent_range: [0.02, 0.24],
            max_short_extent: 0.06,
            min_long_extent: 0.08,
            min_aspect: 1.5,
            ngon_sides_range: [5, 12],
            height_range: [0.01, 0.04],
            density_range: [300.0, 3000.0],
            friction_range: [0.2, 1.0],
            junction_overlap_range: [0.0, 0.008],
            x_offset_fraction: 0.08,
            bend_jitter: 10f64.to_radians(),
        }
    }
}

impl ProcGenConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, lo: f64, hi: f64| -> Result<()> {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(field, format!("range [{lo}, {hi}] must be nonempty with positive lower bound")));
            }
            Ok(())
        };
        check("procgen.part_extent_range", self.part_extent_range[0], self.part_extent_range[1])?;
        check("procgen.height_range", self.height_range[0], self.height_range[1])?;
        check("procgen.density_range", self.density_range[0], self.density_range[1])?;
        check("procgen.friction_range", self.friction_range[0], self.friction_range[1])?;
        if self.friction_range[1] > 2.0 {
            return Err(Error::config("procgen.friction_range", "friction must not exceed 2"));
        }
        let [vlo, vhi] = self.part_vertex_count_range;
        if vlo < 3 || vlo > vhi {
            return Err(Error::config("procgen.part_vertex_count_range", "need 3 <= lo <= hi"));
        }
        let [nlo, nhi] = self.ngon_sides_range;
        if nlo < 3 || nlo > nhi {
            return Err(Error::config("procgen.ngon_sides_range", "need 3 <= lo <= hi"));
        }
        if !(self.min_aspect >= 1.0) {
            return Err(Error::config("procgen.min_aspect", "must be >= 1"));
        }
        if !(self.max_short_extent >= self.part_extent_range[0]) {
            return Err(Error::config("procgen.max_short_extent", "must be >= the minimum part extent"));
        }
        if !(self.min_long_extent <= self.part_extent_range[1]) {
            return Err(Error::config("procgen.min_long_extent", "must not exceed the maximum part extent"));
        }
        if self.part_extent_range[1] < self.part_extent_range[0] * self.min_aspect {
            return Err(Error::config("procgen.part_extent_range", "too narrow for min_aspect"));
        }
        if !(self.junction_overlap_range[0] >= 0.0 && self.junction_overlap_range[0] <= self.junction_overlap_range[1]) {
            return Err(Error::config("procgen.junction_overlap_range", "must be a nonnegative interval"));
        }
        if !(0.0..0.1).contains(&self.x_offset_fraction) {
            return Err(Error::config("procgen.x_offset_fraction", "must lie in [0, 0.1)"));
        }
        if !(0.0..0.5).contains(&self.bend_jitter) {
            return Err(Error::config("procgen.bend_jitter", "must lie in [0, 0.5) rad"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Rectangle,
    RegularPolygon,
    RandomHull,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 3] = [PrimitiveKind::Rectangle, PrimitiveKind::RegularPolygon, PrimitiveKind::RandomHull];
}

#[derive(Clone, Debug)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub polygon: ConvexPolygon,
}

/// Regular `n`-gon stretched so its bounding box is `long × short`, centered
/// at the origin with the long side on x.
pub fn stretched_regular(n: usize, long: f64, short: f64, height: f64) -> Result<ConvexPolygon> {
    let base = ConvexPolygon::regular(n, 1.0, height)?;
    fit_to_box(&base, long, short)
}

fn fit_to_box(poly: &ConvexPolygon, long: f64, short: f64) -> Result<ConvexPolygon> {
    let (lo, hi) = poly.bounds();
    let (cx, cy) = ((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let (sx, sy) = (long / (hi.x - lo.x), short / (hi.y - lo.y));
    let verts = poly
        .vertices()
        .iter()
        .map(|v| Vec2::new((v.x - cx) * sx, (v.y - cy) * sy))
        .collect();
    ConvexPolygon::new(verts, poly.height())
}

/// Draws one convex part, long axis along body x, centered on its bounding box.
pub fn sample_primitive_polygon(rng: &mut Rng, config: &ProcGenConfig) -> Result<Primitive> {
    let kind = PrimitiveKind::ALL[rng.random_range(0..3)];
    sample_primitive_of_kind(rng, config, kind)
}

pub fn sample_primitive_of_kind(rng: &mut Rng, config: &ProcGenConfig, kind: PrimitiveKind) -> Result<Primitive> {
    let [elo, ehi] = config.part_extent_range;
    let height = 1.0; // placeholder; parts get their height in compose_tool
    for _ in 0..MAX_ATTEMPTS {
        let long = rng.random_range(config.min_long_extent.max(elo * config.min_aspect)..=ehi);
        let short_hi = config.max_short_extent.min(long / config.min_aspect);
        let short = rng.random_range(elo..=short_hi.max(elo));
        let polygon = match kind {
            PrimitiveKind::Rectangle => ConvexPolygon::rectangle(long, short, height).ok(),
            PrimitiveKind::RegularPolygon => {
                let n = rng.random_range(config.ngon_sides_range[0]..=config.ngon_sides_range[1]);
                stretched_regular(n, long, short, height).ok()
            }
            PrimitiveKind::RandomHull => {
                let k = rng.random_range(config.part_vertex_count_range[0]..=config.part_vertex_count_range[1]);
                let pts: Vec<Vec2> = (0..k).map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>())).collect();
                ConvexPolygon::hull(&pts, height)
                    .filter(|h| {
                        let (lo, hi) = h.bounds();
                        // reject slivers before stretching
                        h.area() >= 0.3 * (hi.x - lo.x) * (hi.y - lo.y) && hi.x - lo.x > 0.2 && hi.y - lo.y > 0.2
                    })
                    .and_then(|h| fit_to_box(&h, long, short).ok())
                    .filter(|p| {
                        let a = p.principal_axis();
                        a.min(std::f64::consts::PI - a) <= 10f64.to_radians()
                    })
            }
        };
        if let Some(polygon) = polygon {
            return Ok(Primitive { kind, polygon });
        }
    }
    Err(Error::Generation(format!("{kind:?} primitive rejected {MAX_ATTEMPTS} times")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToolShape {
    pub id: String,
    pub family: Family,
    pub shape: CompositeShape,
    pub provenance_seed: u64,
}

impl ToolShape {
    pub fn mass_properties(&self) -> MassProperties {
        mass_properties(&self.shape)
    }

    /// Index of the heavier part (the "bulky" part, e.g. a hammer head).
    pub fn bulky_part(&self) -> usize {
        let m = |i: usize| {
            let p = &self.shape.parts()[i];
            p.area() * p.height() * self.shape.densities()[i]
        };
        if m(1) > m(0) {
            1
        } else {
            0
        }
    }
}

/// Places part B against part A according to the family rule. Both parts
/// arrive with their long axis on x, centered at the origin.
fn assemble(rng: &mut Rng, family: Family, a: &ConvexPolygon, b: &ConvexPolygon, config: &ProcGenConfig) -> Option<[ConvexPolygon; 2]> {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    let a_short = ahi.y - alo.y;
    let b_long = bhi.x - blo.x;
    let a_long = ahi.x - alo.x;
    // B must overhang A's width for the bend to read as a junction
    let min_ratio = if family == Family::T { 1.5 } else { 2.0 };
    if b_long < min_ratio * a_short {
        return None;
    }
    let bend = FRAC_PI_2 + rng.random_range(-config.bend_jitter..=config.bend_jitter);
    let b_rot = b.transformed(&crate::geometry::Pose2::new(0.0, 0.0, bend));
    let (rlo, rhi) = b_rot.bounds();
    let b_half_w = (rhi.x - rlo.x) / 2.0;
    let overlap = MIN_JUNCTION_OVERLAP + rng.random_range(config.junction_overlap_range[0]..=config.junction_overlap_range[1]);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let center = match family {
        Family::X => {
            let j = config.x_offset_fraction;
            Vec2::new(rng.random_range(-j..=j) * a_long, rng.random_range(-j..=j) * b_long)
        }
        Family::T => Vec2::new(ahi.x + b_half_w - overlap, 0.0),
        Family::L => {
            let half_b = (rhi.y - rlo.y) / 2.0;
            Vec2::new(ahi.x + b_half_w - overlap, sign * (half_b - a_short / 2.0))
        }
    };
    let mut placed = b_rot.translated(center);
    if family != Family::X {
        // push B further in until the junction is at least the minimum deep
        for _ in 0..40 {
            let ok = a
                .intersection(&placed)
                .map(|i| {
                    let (lo, hi) = i.bounds();
                    hi.x - lo.x >= MIN_JUNCTION_OVERLAP - 1e-9
                })
                .unwrap_or(false);
            if ok {
                break;
            }
            placed = placed.translated(Vec2::new(-0.001, 0.0));
        }
    }
    let inter = a.intersection(&placed)?;
    let (ilo, ihi) = inter.bounds();
    if (ihi.x - ilo.x).min(ihi.y - ilo.y) < MIN_JUNCTION_OVERLAP - 1e-9 {
        return None;
    }
    Some([a.clone(), placed])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyFeatures {
    /// Angle between principal axes, in [0, π/2].
    pub axis_angle: f64,
    /// Junction position along each part's axis, normalized to [-1, 1].
    pub position_a: f64,
    pub position_b: f64,
}

/// Recovers the family from geometry alone.
pub fn classify_family(shape: &CompositeShape) -> Option<Family> {
    let f = family_features(shape)?;
    if f.axis_angle < 60f64.to_radians() {
        return None;
    }
    let is_mid = |t: f64| t.abs() <= 0.35;
    let is_end = |t: f64| t.abs() >= 0.55;
    let (a, b) = (f.position_a, f.position_b);
    if is_mid(a) && is_mid(b) {
        Some(Family::X)
    } else if (is_end(a) && is_mid(b)) || (is_mid(a) && is_end(b)) {
        Some(Family::T)
    } else if is_end(a) && is_end(b) {
        Some(Family::L)
    } else {
        None
    }
}

pub fn family_features(shape: &CompositeShape) -> Option<FamilyFeatures> {
    let [a, b] = shape.parts();
    let junction = a.intersection(b)?.centroid();
    let along = |p: &ConvexPolygon| {
        let dir = Vec2::from_angle(p.principal_axis());
        let (lo, hi) = p.project(dir);
        let mid = (lo + hi) / 2.0;
        (junction.dot(dir) - mid) / ((hi - lo) / 2.0)
    };
    let mut angle = (a.principal_axis() - b.principal_axis()).abs() % std::f64::consts::PI;
    if angle > FRAC_PI_2 {
        angle = std::f64::consts::PI - angle;
    }
    Some(FamilyFeatures {
        axis_angle: angle,
        position_a: along(a),
        position_b: along(b),
    })
}

/// Builds one tool of the requested family. The body frame origin is the
/// center of mass.
pub fn compose_tool(rng: &mut Rng, family: Family, config: &ProcGenConfig) -> Result<CompositeShape> {
    for _ in 0..MAX_ATTEMPTS {
        let pa = sample_primitive_polygon(rng, config)?.polygon;
        let pb = sample_primitive_polygon(rng, config)?.polygon;
        let ha = rng.random_range(config.height_range[0]..=config.height_range[1]);
        let hb = rng.random_range(config.height_range[0]..=config.height_range[1]);
        let a = pa.with_height(ha)?;
        let b = pb.with_height(hb)?;
        let Some(parts) = assemble(rng, family, &a, &b, config) else {
            continue;
        };
        let densities = [
            rng.random_range(config.density_range[0]..=config.density_range[1]),
            rng.random_range(config.density_range[0]..=config.density_range[1]),
        ];
        let friction = rng.random_range(config.friction_range[0]..=config.friction_range[1]);
        let Ok(mut shape) = CompositeShape::new(parts, densities, friction) else {
            continue;
        };
        let (lo, hi) = shape.bounds();
        let side = (hi.x - lo.x).max(hi.y - lo.y);
        if side > TOOL_BOUND {
            shape = shape.scaled(TOOL_BOUND / side * (1.0 - 1e-9));
        }
        let com = mass_properties(&shape).com;
        let shape = shape.translated(-com);
        if shape.parts()[0].intersection_area(&shape.parts()[1]) <= 0.0 {
            continue;
        }
        if classify_family(&shape) == Some(family) {
            return Ok(shape);
        }
    }
    Err(Error::Generation(format!("{family} tool failed family/connectivity checks {MAX_ATTEMPTS} times")))
}

pub fn tool_seed(library_seed: u64, family: Family, index: usize) -> u64 {
    crate::rng::derive_seed(&[library_seed, tag(family.as_str()), index as u64])
}

pub fn tool_id(family: Family, index: usize, library_seed: u64) -> String {
    format!("{family}-{index}-{library_seed}")
}

pub fn generate_tool(library_seed: u64, family: Family, index: usize, config: &ProcGenConfig) -> Result<ToolShape> {
    let provenance_seed = tool_seed(library_seed, family, index);
    let mut rng = rng_from(&[provenance_seed]);
    let shape = compose_tool(&mut rng, family, config)
        .map_err(|e| Error::Generation(format!("tool {family} #{index}: {e}")))?;
    Ok(ToolShape {
        id: tool_id(family, index, library_seed),
        family,
        shape,
        provenance_seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToolLibrary {
    pub seed: u64,
    pub tools: Vec<ToolShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub family: Family,
    pub mass: f64,
    pub com: [f64; 2],
    pub inertia_z: f64,
    pub union_area: f64,
}

/// Generates `count_per_family` tools of each family, ordered T, L, X.
pub fn generate_library(seed: u64, count_per_family: usize, config: &ProcGenConfig) -> Result<ToolLibrary> {
    use rayon::prelude::*;
    if count_per_family == 0 {
        return Err(Error::config("count_per_family", "must be >= 1"));
    }
    config.validate()?;
    let jobs: Vec<(Family, usize)> = Family::ALL
        .iter()
        .flat_map(|&f| (0..count_per_family).map(move |i| (f, i)))
        .collect();
    let tools = jobs
        .par_iter()
        .map(|&(f, i)| generate_tool(seed, f, i, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToolLibrary { seed, tools })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartDoc {
    vertices: Vec<[f64; 2]>,
    height: f64,
    density: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolDoc {
    id: String,
    family: Family,
    parts: Vec<PartDoc>,
    friction: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryDoc {
    version: u32,
    seed: u64,
    tools: Vec<ToolDoc>,
}

impl ToolLibrary {
    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ToolShape> {
        self.tools.iter().find(|t| t.id == id)
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.tools
            .iter()
            .map(|t| {
                let m = t.mass_properties();
                ManifestEntry {
                    id: t.id.clone(),
                    family: t.family,
                    mass: m.mass,
                    com: [m.com.x, m.com.y],
                    inertia_z: m.inertia_z,
                    union_area: t.shape.union_area(),
                }
            })
            .collect()
    }

    /// Canonical JSON bytes (the library file contents).
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let doc = LibraryDoc {
            version: 1,
            seed: self.seed,
            tools: self
                .tools
                .iter()
                .map(|t| ToolDoc {
                    id: t.id.clone(),
                    family: t.family,
                    parts: t
                        .shape
                        .parts()
                        .iter()
                        .zip(t.shape.densities())
                        .map(|(p, d)| PartDoc {
                            vertices: p.vertices().iter().map(|v| [v.x, v.y]).collect(),
                            height: p.height(),
                            density: d,
                        })
                        .collect(),
                    friction: t.shape.friction(),
                })
                .collect(),
        };
        serde_json::to_vec(&doc).expect("library serializes")
    }

    /// 64-bit FNV-1a over the canonical JSON bytes.
    pub fn hash(&self) -> u64 {
        fnv_1a(&self.to_json_bytes())
    }

    pub fn from_json_bytes(bytes: &[u8], origin: &Path) -> Result<ToolLibrary> {
        let doc: LibraryDoc = serde_json::from_slice(bytes).map_err(|e| Error::format(origin, e.to_string()))?;
        if doc.version != 1 {
            return Err(Error::format(origin, format!("unsupported library version {}", doc.version)));
        }
        let mut tools = Vec::with_capacity(doc.tools.len());
        for t in doc.tools {
            let bad = |d: String| Error::format(origin, format!("tool {}: {d}", t.id));
            let [p0, p1]: [PartDoc; 2] = t
                .parts
                .try_into()
                .map_err(|v: Vec<PartDoc>| bad(format!("expected 2 parts, found {}", v.len())))?;
            let poly = |p: &PartDoc| ConvexPolygon::new(p.vertices.iter().map(|&v| v.into()).collect(), p.height);
            let shape = CompositeShape::new(
                [poly(&p0).map_err(|e| bad(e.to_string()))?, poly(&p1).map_err(|e| bad(e.to_string()))?],
                [p0.density, p1.density],
                t.friction,
            )
            .map_err(|e| bad(e.to_string()))?;
            let index: usize = t
                .id
                .split('-')
                .nth(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("id is not of the form family-index-seed".into()))?;
            tools.push(ToolShape {
                provenance_seed: tool_seed(doc.seed, t.family, index),
                id: t.id,
                family: t.family,
                shape,
            });
        }
        Ok(ToolLibrary { seed: doc.seed, tools })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ToolLibrary> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ToolLibrary::from_json_bytes(&bytes, path)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn rectangle_primitive_area() {
        let p = ConvexPolygon::rectangle(0.2, 0.03, 0.02).unwrap();
        assert_eq!(p.vertices().len(), 4);
        assert!((p.area() - 0.006).abs() < 1e-12);
    }

    #[test]
    fn regular_octagon_area() {
        let p = ConvexPolygon::regular(8, 0.05, 0.02).unwrap();
        // n/2 · R² · sin(2π/n)
        let oracle = 8.0 / 2.0 * 0.05f64.powi(2) * (std::f64::consts::TAU / 8.0).sin();
        assert!((p.area() - oracle).abs() < 1e-12);
        assert!((p.area() - 0.00707).abs() < 1e-5);
    }

    #[test]
    fn primitives_have_long_axis_on_x() {
        let cfg = ProcGenConfig::default();
        let mut rng = rng_from(&[3]);
        for _ in 0..300 {
            let p = sample_primitive_polygon(&mut rng, &cfg).unwrap().polygon;
            let (lo, hi) = p.bounds();
            assert!(hi.x - lo.x >= (hi.y - lo.y) * cfg.min_aspect - 1e-9);
            assert!(hi.y - lo.y <= cfg.max_short_extent + 1e-9);
        }
    }

    #[test]
    fn every_family_classifies_back() {
        let cfg = ProcGenConfig::default();
        for fam in Family::ALL {
            for i in 0..60 {
                let t = generate_tool(11, fam, i, &cfg).unwrap();
                assert_eq!(classify_family(&t.shape), Some(fam), "{}", t.id);
                let (lo, hi) = t.shape.bounds();
                assert!(hi.x - lo.x <= TOOL_BOUND && hi.y - lo.y <= TOOL_BOUND);
                assert!(mass_properties(&t.shape).com.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn t_junction_from_fixed_bars() {
        let cfg = ProcGenConfig {
            bend_jitter: 0.0,
            junction_overlap_range: [0.0, 0.0],
            ..ProcGenConfig::default()
        };
        let a = ConvexPolygon::rectangle(0.20, 0.03, 0.02).unwrap();
        let b = ConvexPolygon::rectangle(0.10, 0.04, 0.02).unwrap();
        let mut rng = rng_from(&[5]);
        let [a, b] = assemble(&mut rng, Family::T, &a, &b, &cfg).unwrap();
        // B is centered on A's +x end line, perpendicular
        let c = b.centroid();
        assert!((c.x - (0.10 + 0.02 - MIN_JUNCTION_OVERLAP)).abs() < 1e-9 && c.y.abs() < 1e-9);
        assert!(a.intersection_area(&b) > 0.0);
        let shape = CompositeShape::new([a, b], [1000.0, 1000.0], 0.5).unwrap();
        assert_eq!(classify_family(&shape), Some(Family::T));
    }
}
