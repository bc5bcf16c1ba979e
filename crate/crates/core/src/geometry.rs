//! Planar (2.5D) geometry used by every simulator module.
//!
//! Footprints are convex polygons extruded to a scalar height above the table.
//! All contact reasoning happens in the table plane; heights only gate
//! vertical engagement.

use std::f64::consts::TAU;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for exact predicates (meters).
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for boundary classification (meters).
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(theta: f64) -> f64 {
    let t = normalize_angle(theta);
    if t > std::f64::consts::PI {
        t - TAU
    } else {
        t
    }
}

/// Rigid planar transform. `theta` is kept in `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Pose2::identity()
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn compose(&self, child: &Pose2) -> Pose2 {
        compose_transform(self, child)
    }

    pub fn inverse(&self) -> Pose2 {
        let t = Vec2::new(-self.x, -self.y).rotated(-self.theta);
        Pose2::new(t.x, t.y, -self.theta)
    }

    /// Maps a body-frame point into the parent frame.
    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotated(self.theta) + self.translation()
    }

    /// Maps a parent-frame point into the body frame.
    pub fn apply_inverse(&self, p: Vec2) -> Vec2 {
        (p - self.translation()).rotated(-self.theta)
    }

    pub fn rotate(&self, v: Vec2) -> Vec2 {
        v.rotated(self.theta)
    }
}

/// Pose of `child` expressed through `parent`.
pub fn compose_transform(parent: &Pose2, child: &Pose2) -> Pose2 {
    let t = parent.apply(child.translation());
    Pose2::new(t.x, t.y, parent.theta + child.theta)
}

/// Area integrals of a region: `∫1, ∫x, ∫y, ∫x², ∫y², ∫xy`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AreaMoments {
    pub area: f64,
    pub sx: f64,
    pub sy: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl AreaMoments {
    fn scaled(self, k: f64) -> AreaMoments {
        AreaMoments {
            area: self.area * k,
            sx: self.sx * k,
            sy: self.sy * k,
            sxx: self.sxx * k,
            syy: self.syy * k,
            sxy: self.sxy * k,
        }
    }

    fn plus(self, o: AreaMoments) -> AreaMoments {
        AreaMoments {
            area: self.area + o.area,
            sx: self.sx + o.sx,
            sy: self.sy + o.sy,
            sxx: self.sxx + o.sxx,
            syy: self.syy + o.syy,
            sxy: self.sxy + o.sxy,
        }
    }
}

/// Strictly convex, counter-clockwise polygon extruded to `height`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
    height: f64,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Vec2>, height: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !(height > 0.0) || !height.is_finite() {
            return Err(Error::Geometry(format!("polygon height must be > 0, got {height}")));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if !a.x.is_finite() || !a.y.is_finite() {
                return Err(Error::Geometry("non-finite vertex".into()));
            }
            if (b - a).cross(c - b) <= 0.0 {
                return Err(Error::Geometry(format!(
                    "polygon is not strictly convex and counter-clockwise at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        let poly = ConvexPolygon { vertices, height };
        if !(poly.area() > 0.0) {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle centered at the origin.
    pub fn rectangle(width: f64, depth: f64, height: f64) -> Result<Self> {
        let (hw, hd) = (width / 2.0, depth / 2.0);
        ConvexPolygon::new(
            vec![
                Vec2::new(-hw, -hd),
                Vec2::new(hw, -hd),
                Vec2::new(hw, hd),
                Vec2::new(-hw, hd),
            ],
            height,
        )
    }

    /// Regular `n`-gon with the given circumradius, first vertex on +x.
    pub fn regular(n: usize, circumradius: f64, height: f64) -> Result<Self> {
        let verts = (0..n)
            .map(|i| Vec2::from_angle(TAU * i as f64 / n as f64) * circumradius)
            .collect();
        ConvexPolygon::new(verts, height)
    }

    /// Convex hull of a point set (Andrew's monotone chain). Returns `None`
    /// when the hull is degenerate.
    pub fn hull(points: &[Vec2], height: f64) -> Option<Self> {
        let mut pts: Vec<Vec2> = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup_by(|a, b| a.distance(*b) < EXACT_TOL);
        if pts.len() < 3 {
            return None;
        }
        let mut lower: Vec<Vec2> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2
                && (lower[lower.len() - 1] - lower[lower.len() - 2]).cross(p - lower[lower.len() - 1])
                    <= EXACT_TOL * EXACT_TOL
            {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<Vec2> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2
                && (upper[upper.len() - 1] - upper[upper.len() - 2]).cross(p - upper[upper.len() - 1])
                    <= EXACT_TOL * EXACT_TOL
            {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        ConvexPolygon::new(lower, height).ok()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn with_height(&self, height: f64) -> Result<Self> {
        ConvexPolygon::new(self.vertices.clone(), height)
    }

    /// Iterator over edges `(start, end)`.
    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        self.moments().area
    }

    pub fn centroid(&self) -> Vec2 {
        let m = self.moments();
        Vec2::new(m.sx / m.area, m.sy / m.area)
    }

    pub fn moments(&self) -> AreaMoments {
        polygon_moments(&self.vertices)
    }

    pub fn transformed(&self, pose: &Pose2) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.vertices.iter().map(|&v| pose.apply(v)).collect(),
            height: self.height,
        }
    }

    pub fn translated(&self, d: Vec2) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.vertices.iter().map(|&v| v + d).collect(),
            height: self.height,
        }
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, k: f64) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.vertices.iter().map(|&v| v * k).collect(),
            height: self.height,
        }
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        bounds_of(&self.vertices)
    }

    /// Containment with boundary tolerance `tol` (positive `tol` grows the polygon).
    pub fn contains_with(&self, p: Vec2, tol: f64) -> bool {
        self.edges().all(|(a, b)| {
            let e = b - a;
            // signed distance to the edge line, positive inside
            e.cross(p - a) / e.norm() >= -tol
        })
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.contains_with(p, EXACT_TOL)
    }

    /// Signed distance: negative inside, positive outside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        if self.contains_with(p, 0.0) {
            let depth = self
                .edges()
                .map(|(a, b)| {
                    let e = b - a;
                    e.cross(p - a) / e.norm()
                })
                .fold(f64::INFINITY, f64::min);
            -depth
        } else {
            self.closest_boundary_point(p).distance(p)
        }
    }

    pub fn closest_boundary_point(&self, p: Vec2) -> Vec2 {
        let mut best = self.vertices[0];
        let mut best_d = f64::INFINITY;
        for (a, b) in self.edges() {
            let q = closest_on_segment(p, a, b);
            let d = q.distance(p);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        best
    }

    /// Closest point of the (filled) polygon to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        if self.contains_with(p, 0.0) {
            p
        } else {
            self.closest_boundary_point(p)
        }
    }

    /// Convex-convex intersection (Sutherland-Hodgman). `None` when empty or
    /// degenerate (zero area).
    pub fn intersection(&self, other: &ConvexPolygon) -> Option<ConvexPolygon> {
        let mut out: Vec<Vec2> = self.vertices.clone();
        for (a, b) in other.edges() {
            if out.is_empty() {
                return None;
            }
            let e = b - a;
            let inside = |p: Vec2| e.cross(p - a) >= 0.0;
            let input = std::mem::take(&mut out);
            let n = input.len();
            for i in 0..n {
                let cur = input[i];
                let prev = input[(i + n - 1) % n];
                let (ci, pi) = (inside(cur), inside(prev));
                if ci {
                    if !pi {
                        out.push(line_intersection(prev, cur, a, b));
                    }
                    out.push(cur);
                } else if pi {
                    out.push(line_intersection(prev, cur, a, b));
                }
            }
        }
        let pts = dedup_ring(out);
        if pts.len() < 3 || polygon_moments(&pts).area <= 1e-14 {
            return None;
        }
        let h = self.height.max(other.height);
        ConvexPolygon::hull(&pts, h)
    }

    pub fn intersection_area(&self, other: &ConvexPolygon) -> f64 {
        self.intersection(other).map_or(0.0, |p| p.area())
    }

    /// Separating-axis overlap test. Touching counts as overlapping.
    pub fn overlaps(&self, other: &ConvexPolygon) -> bool {
        !has_separating_axis(self, other, EXACT_TOL) && !has_separating_axis(other, self, EXACT_TOL)
    }

    /// Minimum distance between two convex polygons (0 when overlapping).
    pub fn distance_to(&self, other: &ConvexPolygon) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let mut d = f64::INFINITY;
        for &v in &self.vertices {
            d = d.min(other.closest_boundary_point(v).distance(v));
        }
        for &v in &other.vertices {
            d = d.min(self.closest_boundary_point(v).distance(v));
        }
        d
    }

    pub fn overlaps_disk(&self, center: Vec2, radius: f64) -> bool {
        self.signed_distance(center) <= radius + EXACT_TOL
    }

    /// Principal (major) axis direction of the area distribution, as an angle in `[0, π)`.
    pub fn principal_axis(&self) -> f64 {
        let m = self.moments();
        let c = Vec2::new(m.sx / m.area, m.sy / m.area);
        let ixx = m.sxx / m.area - c.x * c.x;
        let iyy = m.syy / m.area - c.y * c.y;
        let ixy = m.sxy / m.area - c.x * c.y;
        let phi = 0.5 * (2.0 * ixy).atan2(ixx - iyy);
        phi.rem_euclid(std::f64::consts::PI)
    }

    /// `(y_min, y_max)` of the polygon's intersection with the vertical line at `x`.
    pub fn vertical_extent(&self, x: f64) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (a, b) in self.edges() {
            let (x0, x1) = (a.x.min(b.x), a.x.max(b.x));
            if x < x0 || x > x1 {
                continue;
            }
            if (b.x - a.x).abs() < 1e-15 {
                lo = lo.min(a.y.min(b.y));
                hi = hi.max(a.y.max(b.y));
            } else {
                let y = a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x);
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Support extent `(min, max)` of the vertices projected on `dir`.
    pub fn project(&self, dir: Vec2) -> (f64, f64) {
        self.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let t = v.dot(dir);
            (lo.min(t), hi.max(t))
        })
    }
}

fn has_separating_axis(a: &ConvexPolygon, b: &ConvexPolygon, tol: f64) -> bool {
    a.edges().any(|(p, q)| {
        let n = (q - p).perp().normalized() * -1.0; // outward for CCW
        let amax = p.dot(n);
        let (bmin, _) = b.project(n);
        bmin > amax + tol
    })
}

fn dedup_ring(mut pts: Vec<Vec2>) -> Vec<Vec2> {
    pts.dedup_by(|a, b| a.distance(*b) < 1e-12);
    while pts.len() > 1 && pts[0].distance(pts[pts.len() - 1]) < 1e-12 {
        pts.pop();
    }
    pts
}

fn line_intersection(p1: Vec2, p2: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let d = p2 - p1;
    let e = b - a;
    let denom = d.cross(e);
    if denom.abs() < 1e-300 {
        return p1;
    }
    let t = (a - p1).cross(e) / denom;
    p1 + d * t
}

pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let e = b - a;
    let len2 = e.norm_sq();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
    a + e * t
}

pub fn bounds_of(points: &[Vec2]) -> (Vec2, Vec2) {
    points.iter().fold(
        (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), v| (Vec2::new(lo.x.min(v.x), lo.y.min(v.y)), Vec2::new(hi.x.max(v.x), hi.y.max(v.y))),
    )
}

/// Exact area integrals of a simple CCW polygon.
pub fn polygon_moments(v: &[Vec2]) -> AreaMoments {
    let n = v.len();
    let mut m = AreaMoments::default();
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        let c = p.cross(q);
        m.area += c / 2.0;
        m.sx += (p.x + q.x) * c / 6.0;
        m.sy += (p.y + q.y) * c / 6.0;
        m.sxx += (p.x * p.x + p.x * q.x + q.x * q.x) * c / 12.0;
        m.syy += (p.y * p.y + p.y * q.y + q.y * q.y) * c / 12.0;
        m.sxy += (p.x * q.y + 2.0 * p.x * p.y + 2.0 * q.x * q.y + q.x * p.y) * c / 24.0;
    }
    m
}

/// A tool footprint: exactly two convex parts in a shared body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeShape {
    parts: [ConvexPolygon; 2],
    densities: [f64; 2],
    friction: f64,
}

impl CompositeShape {
    pub fn new(parts: [ConvexPolygon; 2], densities: [f64; 2], friction: f64) -> Result<Self> {
        if !(friction > 0.0 && friction <= 2.0) {
            return Err(Error::Geometry(format!("friction must lie in (0, 2], got {friction}")));
        }
        if densities.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Geometry("part densities must be positive".into()));
        }
        if parts[0].distance_to(&parts[1]) > EXACT_TOL {
            return Err(Error::Geometry("composite parts are disconnected".into()));
        }
        let shape = CompositeShape {
            parts,
            densities,
            friction,
        };
        if !(mass_properties(&shape).mass > 0.0) {
            return Err(Error::Geometry("composite has zero mass".into()));
        }
        Ok(shape)
    }

    pub fn parts(&self) -> &[ConvexPolygon; 2] {
        &self.parts
    }

    pub fn densities(&self) -> [f64; 2] {
        self.densities
    }

    pub fn friction(&self) -> f64 {
        self.friction
    }

    pub fn posed_parts(&self, pose: &Pose2) -> [ConvexPolygon; 2] {
        [self.parts[0].transformed(pose), self.parts[1].transformed(pose)]
    }

    /// Same shape with all vertices moved by `d` in the body frame.
    pub fn translated(&self, d: Vec2) -> CompositeShape {
        CompositeShape {
            parts: [self.parts[0].translated(d), self.parts[1].translated(d)],
            densities: self.densities,
            friction: self.friction,
        }
    }

    pub fn scaled(&self, k: f64) -> CompositeShape {
        CompositeShape {
            parts: [self.parts[0].scaled(k), self.parts[1].scaled(k)],
            densities: self.densities,
            friction: self.friction,
        }
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        let (a0, a1) = self.parts[0].bounds();
        let (b0, b1) = self.parts[1].bounds();
        (Vec2::new(a0.x.min(b0.x), a0.y.min(b0.y)), Vec2::new(a1.x.max(b1.x), a1.y.max(b1.y)))
    }

    pub fn max_height(&self) -> f64 {
        self.parts[0].height().max(self.parts[1].height())
    }

    /// Max surface height at a body-frame point (0 outside the footprint).
    pub fn surface_height(&self, p: Vec2) -> f64 {
        self.parts
            .iter()
            .filter(|part| part.contains(p))
            .map(|part| part.height())
            .fold(0.0, f64::max)
    }

    pub fn union_area(&self) -> f64 {
        self.parts[0].area() + self.parts[1].area() - self.parts[0].intersection_area(&self.parts[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassProperties {
    pub mass: f64,
    pub com: Vec2,
    pub inertia_z: f64,
}

impl MassProperties {
    /// Planar inertia about an arbitrary body-frame point (parallel axis).
    pub fn inertia_about(&self, p: Vec2) -> f64 {
        self.inertia_z + self.mass * (p - self.com).norm_sq()
    }
}

/// Whether world point `p` lies in the union footprint of the posed shape.
pub fn point_in_composite(shape: &CompositeShape, pose: &Pose2, p: Vec2) -> bool {
    let q = pose.apply_inverse(p);
    shape.parts.iter().any(|part| part.contains(q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub point: Vec2,
    pub normal: Vec2,
    pub part: usize,
    pub distance: f64,
}

/// Nearest union-boundary crossing along a ray (world frame).
pub fn ray_first_hit(
    shape: &CompositeShape,
    pose: &Pose2,
    origin: Vec2,
    direction: Vec2,
) -> Option<RayHit> {
    debug_assert!((direction.norm() - 1.0).abs() < 1e-9, "ray direction must be unit length");
    let o = pose.apply_inverse(origin);
    let d = direction.rotated(-pose.theta);
    let mut crossings: Vec<(f64, Vec2, Vec2, usize)> = Vec::new();
    for (pi, part) in shape.parts.iter().enumerate() {
        for (a, b) in part.edges() {
            let e = b - a;
            let denom = d.cross(e);
            if denom.abs() < 1e-15 {
                continue;
            }
            let t = (a - o).cross(e) / denom;
            let s = (a - o).cross(d) / denom;
            if t >= -EXACT_TOL && (-EXACT_TOL..=1.0 + EXACT_TOL).contains(&s) {
                let normal = Vec2::new(e.y, -e.x).normalized();
                crossings.push((t.max(0.0), o + d * t.max(0.0), normal, pi));
            }
        }
    }
    crossings.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.3.cmp(&b.3)));
    for (t, p, n, pi) in crossings {
        let other = &shape.parts[1 - pi];
        // skip crossings buried strictly inside the other part
        if other.contains_with(p, -EXACT_TOL) {
            continue;
        }
        return Some(RayHit {
            point: pose.apply(p),
            normal: pose.rotate(n),
            part: pi,
            distance: t,
        });
    }
    None
}

/// Mass properties of the extruded union. The overlap region takes the
/// taller part's height and the mean of the two densities.
pub fn mass_properties(shape: &CompositeShape) -> MassProperties {
    let [a, b] = &shape.parts;
    let [ra, rb] = shape.densities;
    let ma = a.moments();
    let mb = b.moments();
    let mi = a.intersection(b).map(|p| p.moments()).unwrap_or_default();
    let (ha, hb) = (a.height(), b.height());
    let ka = ra * ha;
    let kb = rb * hb;
    let ki = 0.5 * (ra + rb) * ha.max(hb);
    let total = ma
        .scaled(ka)
        .plus(mb.scaled(kb))
        .plus(mi.scaled(ki - ka - kb));
    let mass = total.area;
    let com = Vec2::new(total.sx / mass, total.sy / mass);
    let inertia_z = total.sxx + total.syy - mass * com.norm_sq();
    MassProperties {
        mass,
        com,
        inertia_z,
    }
}

/// Region swept by the posed footprint translated along a segment.
#[derive(Clone, Debug)]
pub struct SweptRegion {
    hulls: Vec<ConvexPolygon>,
}

impl SweptRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        self.hulls.iter().any(|h| h.contains(p))
    }

    pub fn hulls(&self) -> &[ConvexPolygon] {
        &self.hulls
    }
}

/// Minkowski sum of the posed footprint with the segment `[0, length·direction]`.
pub fn sweep_corridor(shape: &CompositeShape, pose: &Pose2, direction: Vec2, length: f64) -> SweptRegion {
    let offset = direction * length;
    let hulls = shape
        .posed_parts(pose)
        .iter()
        .map(|part| {
            if length <= 0.0 {
                return part.clone();
            }
            let mut pts: Vec<Vec2> = part.vertices().to_vec();
            pts.extend(part.vertices().iter().map(|&v| v + offset));
            ConvexPolygon::hull(&pts, part.height()).unwrap_or_else(|| part.clone())
        })
        .collect();
    SweptRegion { hulls }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcContact {
    /// Rotation (radians, CCW) at first touch. Zero means the target already
    /// touches the footprint in the start pose.
    pub angle: f64,
    /// World contact point on the rotated tool.
    pub point: Vec2,
    pub moment_arm: f64,
    pub part: usize,
}

impl ArcContact {
    pub fn is_pre_contact(&self) -> bool {
        self.angle == 0.0
    }
}

/// Distance from world point `p` to the posed footprint, with the nearest point and part.
fn footprint_closest(parts: &[ConvexPolygon; 2], p: Vec2) -> (f64, Vec2, usize) {
    let mut best = (f64::INFINITY, p, 0);
    for (i, part) in parts.iter().enumerate() {
        let q = part.closest_point(p);
        let d = q.distance(p);
        if d < best.0 {
            best = (d, q, i);
        }
    }
    best
}

/// Smallest CCW rotation about `grasp_center`, in `(0, arc]`, at which the
/// footprint first touches a disk target.
pub fn arc_first_contact(
    shape: &CompositeShape,
    grasp_center: Vec2,
    start_pose: &Pose2,
    target: Vec2,
    target_radius: f64,
    arc: f64,
) -> Option<ArcContact> {
    let parts = shape.posed_parts(start_pose);
    let r = target_radius.max(0.0);
    let (d0, q0, part0) = footprint_closest(&parts, target);
    if d0 <= r + EXACT_TOL {
        return Some(ArcContact {
            angle: 0.0,
            point: q0,
            moment_arm: q0.distance(grasp_center),
            part: part0,
        });
    }
    let rel = target - grasp_center;
    let rho = rel.norm();
    if rho < EXACT_TOL {
        return None;
    }
    let reach = parts
        .iter()
        .flat_map(|p| p.vertices().iter())
        .map(|v| v.distance(grasp_center))
        .fold(0.0, f64::max);
    if rho > reach + r {
        return None;
    }
    // Rotating the tool CCW by α is the same as moving the target CW along
    // the circle of radius rho: T(α) = C + rho·(cos(β0 − α), sin(β0 − α)).
    let beta0 = rel.angle();
    let mut best: Option<f64> = None;
    let mut consider = |beta: f64| {
        let alpha = normalize_angle(beta0 - beta);
        if alpha > 0.0 && alpha <= arc + 1e-12 {
            best = Some(best.map_or(alpha, |b: f64| b.min(alpha)));
        }
    };
    for part in &parts {
        for (a, b) in part.edges() {
            let e = b - a;
            let len = e.norm();
            let u = e * (1.0 / len);
            let n = Vec2::new(u.y, -u.x);
            // offset line n·(p − a) = r, restricted to the edge span
            let k = (r - n.dot(grasp_center - a)) / rho;
            if k.abs() <= 1.0 {
                let psi = n.angle();
                let delta = k.acos();
                for beta in [psi + delta, psi - delta] {
                    let p = grasp_center + Vec2::from_angle(beta) * rho;
                    let s = (p - a).dot(u);
                    if (-EXACT_TOL..=len + EXACT_TOL).contains(&s) {
                        consider(beta);
                    }
                }
            }
            // corner disk at a
            if r > 0.0 {
                let cv = grasp_center - a;
                let dcv = cv.norm();
                if dcv > EXACT_TOL {
                    let k = (r * r - rho * rho - dcv * dcv) / (2.0 * rho * dcv);
                    if k.abs() <= 1.0 {
                        let psi = cv.angle();
                        let delta = k.acos();
                        consider(psi + delta);
                        consider(psi - delta);
                    }
                }
            }
        }
    }
    let alpha = best?;
    let moved_target = grasp_center + Vec2::from_angle(beta0 - alpha) * rho;
    let (_, q, part) = footprint_closest(&parts, moved_target);
    let point = grasp_center + (q - grasp_center).rotated(alpha);
    Some(ArcContact {
        angle: alpha,
        point,
        moment_arm: point.distance(grasp_center),
        part,
    })
}
