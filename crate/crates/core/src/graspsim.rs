//! Antipodal candidate sampling from depth and analytic grasp outcomes.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depthcam::DepthObservation;
use crate::error::{Error, Result};
use crate::geometry::{mass_properties, point_in_composite, ray_first_hit, CompositeShape, Pose2, Vec2};
use crate::rng::{rng_from, Rng};

pub const GRAVITY: f64 = 9.81;

/// Wraps an undirected axis angle into `[0, π)`.
pub fn normalize_axis(phi: f64) -> f64 {
    let t = phi.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Difference between two undirected axes, in `[0, π/2]`.
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point: Vec2,
    pub normal: Vec2,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspSpec {
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
    pub gphi: f64,
    pub width: f64,
    pub contacts: Option<[Contact; 2]>,
}

impl GraspSpec {
    pub fn new(gx: f64, gy: f64, gz: f64, gphi: f64, width: f64) -> Self {
        GraspSpec {
            gx,
            gy,
            gz,
            gphi: normalize_axis(gphi),
            width,
            contacts: None,
        }
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.gx, self.gy)
    }

    pub fn axis(&self) -> Vec2 {
        Vec2::from_angle(self.gphi)
    }

    /// Distance used for duplicate detection and NMS.
    pub fn distance(&self, other: &GraspSpec, angle_weight: f64) -> f64 {
        self.center().distance(other.center()) + angle_weight * axis_angle_diff(self.gphi, other.gphi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GripperModel {
    pub max_opening: f64,
    pub finger_width: f64,
    pub close_force: f64,
    pub finger_friction: f64,
    pub exec_noise_xy: f64,
    pub exec_noise_phi: f64,
    /// When true the contact friction is the geometric mean of finger and
    /// tool friction; otherwise the finger friction alone.
    pub use_tool_friction: bool,
}

impl Default for GripperModel {
    fn default() -> Self {
        GripperModel {
            max_opening: 0.08,
            finger_width: 0.01,
            close_force: 40.0,
            finger_friction: 0.5,
            exec_noise_xy: 0.0025,
            exec_noise_phi: 0.02,
            use_tool_friction: true,
        }
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("gripper.max_opening", self.max_opening),
            ("gripper.finger_width", self.finger_width),
            ("gripper.close_force", self.close_force),
            ("gripper.finger_friction", self.finger_friction),
        ];
        for (f, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(f, "must be positive"));
            }
        }
        if !(self.exec_noise_xy >= 0.0 && self.exec_noise_phi >= 0.0) {
            return Err(Error::config("gripper.exec_noise", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn contact_friction(&self, tool_friction: f64) -> f64 {
        if self.use_tool_friction {
            (self.finger_friction * tool_friction).sqrt()
        } else {
            self.finger_friction
        }
    }

    /// Largest gravity torque the closed fingers can resist.
    pub fn torque_limit(&self, tool_friction: f64) -> f64 {
        self.contact_friction(tool_friction) * self.close_force * self.finger_width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspFailure {
    None,
    NoContact,
    TooWide,
    FrictionCone,
    HeightMiss,
    TorqueSlip,
}

impl GraspFailure {
    pub const ALL: [GraspFailure; 6] = [
        GraspFailure::None,
        GraspFailure::NoContact,
        GraspFailure::TooWide,
        GraspFailure::FrictionCone,
        GraspFailure::HeightMiss,
        GraspFailure::TorqueSlip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GraspFailure::None => "none",
            GraspFailure::NoContact => "no_contact",
            GraspFailure::TooWide => "too_wide",
            GraspFailure::FrictionCone => "friction_cone",
            GraspFailure::HeightMiss => "height_miss",
            GraspFailure::TorqueSlip => "torque_slip",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        GraspFailure::ALL.get(c as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspOutcome {
    pub success: bool,
    pub failure_reason: GraspFailure,
    pub realized: GraspSpec,
    /// Distance from the tool COM to the contact line (when contacts exist).
    pub com_offset: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Boundary threshold on the surface-height gradient (meters per pixel).
    pub gradient_threshold: f64,
    /// Surface height separating tool from table while marching.
    pub surface_threshold: f64,
    pub antiparallel_tolerance: f64,
    pub gz_fraction: [f64; 2],
    pub dedup_distance: f64,
    pub dedup_angle: f64,
    /// Direction perturbation for passes after the first.
    pub direction_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            gradient_threshold: 0.005,
            surface_threshold: 0.005,
            antiparallel_tolerance: 20f64.to_radians(),
            gz_fraction: [0.25, 0.75],
            dedup_distance: 0.002,
            dedup_angle: 0.05,
            direction_jitter: 12f64.to_radians(),
        }
    }
}

struct HeightField<'a> {
    obs: &'a DepthObservation,
}

impl HeightField<'_> {
    fn h(&self, r: f64, c: f64) -> f64 {
        self.obs.camera.camera_height - self.obs.sample(r, c)
    }

    fn pixel(&self, r: usize, c: usize) -> f64 {
        self.obs.camera.camera_height - self.obs.at(r, c)
    }

    /// Smoothed (Sobel-weighted) gradient in (row, col) pixel units, meters/px.
    fn grad(&self, r: f64, c: f64) -> (f64, f64) {
        let mut gr = 0.0;
        let mut gc = 0.0;
        for (o, w) in [(-1.0, 1.0), (0.0, 2.0), (1.0, 1.0)] {
            gr += w * (self.h(r + 1.0, c + o) - self.h(r - 1.0, c + o));
            gc += w * (self.h(r + o, c + 1.0) - self.h(r + o, c - 1.0));
        }
        (gr / 8.0, gc / 8.0)
    }
}

/// Image-space direction (drow, dcol) → world direction.
fn image_dir_to_world(obs: &DepthObservation, dr: f64, dc: f64) -> Vec2 {
    Vec2::new(dc, -dr).rotated(obs.pose.rotation).normalized()
}

/// Samples up to `n` antipodal candidates from depth gradients.
pub fn sample_antipodal_candidates(
    obs: &DepthObservation,
    gripper: &GripperModel,
    n: usize,
    rng: &mut Rng,
) -> Vec<GraspSpec> {
    sample_antipodal_candidates_with(obs, gripper, &SamplerConfig::default(), n, rng)
}

pub fn sample_antipodal_candidates_with(
    obs: &DepthObservation,
    gripper: &GripperModel,
    cfg: &SamplerConfig,
    n: usize,
    rng: &mut Rng,
) -> Vec<GraspSpec> {
    let size = obs.size();
    let field = HeightField { obs };
    let mut boundary: Vec<(usize, usize)> = Vec::new();
    for r in 1..size - 1 {
        for c in 1..size - 1 {
            let gr = (field.pixel(r + 1, c) - field.pixel(r - 1, c)) / 2.0;
            let gc = (field.pixel(r, c + 1) - field.pixel(r, c - 1)) / 2.0;
            if gr.hypot(gc) > cfg.gradient_threshold {
                boundary.push((r, c));
            }
        }
    }
    let mut out: Vec<GraspSpec> = Vec::new();
    if boundary.is_empty() || n == 0 {
        return out;
    }
    let s = obs.camera.pixel_size();
    let max_attempts = boundary.len().max(n) * 8;
    let mut order: Vec<usize> = (0..boundary.len()).collect();
    let mut attempts = 0;
    let mut pass = 0;
    'outer: while attempts < max_attempts {
        order.shuffle(rng);
        for &idx in &order {
            if out.len() >= n || attempts >= max_attempts {
                break 'outer;
            }
            attempts += 1;
            let (r, c) = boundary[idx];
            let (gr, gc) = field.grad(r as f64, c as f64);
            let norm = gr.hypot(gc);
            if norm <= cfg.gradient_threshold {
                continue;
            }
            // inward direction in image space, optionally perturbed
            let mut ang = gr.atan2(gc);
            let (mut r0, mut c0) = (r as f64, c as f64);
            if pass > 0 {
                ang += rng.random_range(-cfg.direction_jitter..=cfg.direction_jitter);
                r0 += rng.random_range(-0.5..0.5);
                c0 += rng.random_range(-0.5..0.5);
            }
            let (dr, dc) = (ang.sin(), ang.cos());
            if let Some(g) = march_pair(&field, cfg, gripper, (r0, c0), (dr, dc), s, rng) {
                let dup = out.iter().any(|o| {
                    o.center().distance(g.center()) < cfg.dedup_distance && axis_angle_diff(o.gphi, g.gphi) < cfg.dedup_angle
                });
                if !dup {
                    out.push(g);
                }
            }
        }
        pass += 1;
    }
    out
}

/// Finds the entry and exit edges of the line through `start` along the
/// inward direction and turns them into a grasp when antipodal.
fn march_pair(
    field: &HeightField,
    cfg: &SamplerConfig,
    gripper: &GripperModel,
    start: (f64, f64),
    dir: (f64, f64),
    pixel: f64,
    rng: &mut Rng,
) -> Option<GraspSpec> {
    let thr = cfg.surface_threshold;
    let step = 0.25;
    let limit = (gripper.max_opening / pixel / step).ceil() as usize + 8;
    let at = |t: f64| (start.0 + dir.0 * t, start.1 + dir.1 * t);
    let h_at = |t: f64| {
        let (r, c) = at(t);
        field.h(r, c)
    };
    // the boundary pixel may sit just outside the footprint; find an inside point
    let mut t_in = None;
    for k in 0..12 {
        let t = k as f64 * step;
        if h_at(t) >= thr {
            t_in = Some(t);
            break;
        }
    }
    let t_in = t_in?;
    let crossing = |sign: f64| -> Option<f64> {
        let mut prev = t_in;
        for k in 1..=limit {
            let t = t_in + sign * k as f64 * step;
            if h_at(t) < thr {
                // refine between prev (inside) and t (outside)
                let (mut a, mut b) = (prev, t);
                for _ in 0..20 {
                    let m = 0.5 * (a + b);
                    if h_at(m) >= thr {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return Some(0.5 * (a + b));
            }
            prev = t;
        }
        None
    };
    let t_exit = crossing(1.0)?;
    let t_entry = crossing(-1.0)?;
    let width = (t_exit - t_entry) * pixel;
    if !(width > 0.0) || width > gripper.max_opening {
        return None;
    }
    // edge normals (inward gradients) must be anti-parallel within tolerance
    let grad_dir = |t: f64| {
        let (r, c) = at(t);
        let (gr, gc) = field.grad(r, c);
        let n = gr.hypot(gc);
        (n > 1e-9).then(|| (gr / n, gc / n))
    };
    let ge = grad_dir(t_entry)?;
    let gx = grad_dir(t_exit)?;
    let cos_tol = cfg.antiparallel_tolerance.cos();
    if -(ge.0 * gx.0 + ge.1 * gx.1) < cos_tol {
        return None;
    }
    // the closing axis itself must also run along both edge normals
    if ge.0 * dir.0 + ge.1 * dir.1 < cos_tol || -(gx.0 * dir.0 + gx.1 * dir.1) < cos_tol {
        return None;
    }
    // contact-side surface heights, sampled a little inside each edge
    let inset = 1.5;
    let h_entry = h_at(t_entry + inset);
    let h_exit = h_at(t_exit - inset);
    let h_min = h_entry.min(h_exit);
    if !(h_min > 0.0) {
        return None;
    }
    let mid = at(0.5 * (t_entry + t_exit));
    let center = field.obs.pixel_to_world(mid.0, mid.1);
    let axis = image_dir_to_world(field.obs, dir.0, dir.1);
    let frac = rng.random_range(cfg.gz_fraction[0]..=cfg.gz_fraction[1]);
    Some(GraspSpec::new(center.x, center.y, frac * h_min, axis.angle(), width))
}

/// Closes the fingers on the tool and evaluates conditions (a)-(d) without
/// execution noise.
pub fn evaluate_grasp_exact(tool: &CompositeShape, pose: &Pose2, grasp: &GraspSpec, gripper: &GripperModel) -> GraspOutcome {
    let axis = grasp.axis();
    let c = grasp.center();
    let half = gripper.max_opening / 2.0;
    let mut realized = grasp.clone();
    let fail = |reason, realized: GraspSpec, off| GraspOutcome {
        success: false,
        failure_reason: reason,
        realized,
        com_offset: off,
    };
    let start_pos = c + axis * half;
    let start_neg = c - axis * half;
    if point_in_composite(tool, pose, start_pos) || point_in_composite(tool, pose, start_neg) {
        return fail(GraspFailure::TooWide, realized, None);
    }
    let hit_pos = ray_first_hit(tool, pose, start_pos, -axis);
    let hit_neg = ray_first_hit(tool, pose, start_neg, axis);
    let (Some(hp), Some(hn)) = (hit_pos, hit_neg) else {
        return fail(GraspFailure::NoContact, realized, None);
    };
    if hp.distance > gripper.max_opening || hn.distance > gripper.max_opening {
        return fail(GraspFailure::NoContact, realized, None);
    }
    let parts = tool.parts();
    let contacts = [
        Contact {
            point: hp.point,
            normal: hp.normal,
            height: parts[hp.part].height(),
        },
        Contact {
            point: hn.point,
            normal: hn.normal,
            height: parts[hn.part].height(),
        },
    ];
    let width = hp.point.distance(hn.point);
    realized.width = width;
    realized.contacts = Some(contacts);
    let com_world = pose.apply(mass_properties(tool).com);
    let d_perp = (com_world - hn.point).cross(axis).abs();
    if !(width > 0.0) || width > gripper.max_opening {
        return fail(GraspFailure::TooWide, realized, Some(d_perp));
    }
    let mu = gripper.contact_friction(tool.friction());
    let cone = mu.atan();
    let ang_pos = hp.normal.dot(axis).clamp(-1.0, 1.0).acos();
    let ang_neg = hn.normal.dot(-axis).clamp(-1.0, 1.0).acos();
    if ang_pos > cone || ang_neg > cone {
        return fail(GraspFailure::FrictionCone, realized, Some(d_perp));
    }
    if !(grasp.gz > 0.0) || grasp.gz >= contacts[0].height || grasp.gz >= contacts[1].height {
        return fail(GraspFailure::HeightMiss, realized, Some(d_perp));
    }
    let mass = mass_properties(tool).mass;
    if mass * GRAVITY * d_perp > gripper.torque_limit(tool.friction()) {
        return fail(GraspFailure::TorqueSlip, realized, Some(d_perp));
    }
    GraspOutcome {
        success: true,
        failure_reason: GraspFailure::None,
        realized,
        com_offset: Some(d_perp),
    }
}

/// Applies execution noise to the commanded grasp.
pub fn perturb_grasp(grasp: &GraspSpec, gripper: &GripperModel, rng: &mut Rng) -> GraspSpec {
    let mut g = grasp.clone();
    g.contacts = None;
    if gripper.exec_noise_xy > 0.0 {
        let nxy = Normal::new(0.0, gripper.exec_noise_xy).expect("finite std");
        g.gx += nxy.sample(rng);
        g.gy += nxy.sample(rng);
    }
    if gripper.exec_noise_phi > 0.0 {
        let nphi = Normal::new(0.0, gripper.exec_noise_phi).expect("finite std");
        g.gphi = normalize_axis(g.gphi + nphi.sample(rng));
    }
    g
}

pub fn evaluate_grasp(tool: &CompositeShape, pose: &Pose2, grasp: &GraspSpec, gripper: &GripperModel, rng: &mut Rng) -> GraspOutcome {
    let g = perturb_grasp(grasp, gripper, rng);
    evaluate_grasp_exact(tool, pose, &g, gripper)
}

/// Monte-Carlo estimate of Pr(S_G = 1) over `k` noise draws.
pub fn grasp_robustness_mc(
    tool: &CompositeShape,
    pose: &Pose2,
    grasp: &GraspSpec,
    gripper: &GripperModel,
    k: usize,
    seed: u64,
) -> f64 {
    let k = k.max(1);
    let hits = (0..k)
        .filter(|&i| {
            let mut rng = rng_from(&[seed, i as u64]);
            evaluate_grasp(tool, pose, grasp, gripper, &mut rng).success
        })
        .count();
    hits as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexPolygon;

    fn bar(mass: f64) -> CompositeShape {
        let p = ConvexPolygon::rectangle(0.3, 0.03, 0.02).unwrap();
        let density = mass / (0.3 * 0.03 * 0.02);
        CompositeShape::new([p.clone(), p], [density, density], 0.5).unwrap()
    }

    fn noiseless() -> GripperModel {
        GripperModel {
            exec_noise_xy: 0.0,
            exec_noise_phi: 0.0,
            ..GripperModel::default()
        }
    }

    #[test]
    fn centered_grasp_succeeds() {
        let g = GraspSpec::new(0.0, 0.0, 0.01, PI / 2.0, 0.03);
        let out = evaluate_grasp_exact(&bar(0.3), &Pose2::identity(), &g, &noiseless());
        assert!(out.success, "{:?}", out.failure_reason);
        assert!((out.realized.width - 0.03).abs() < 1e-12);
    }

    #[test]
    fn off_center_grasp_slips() {
        // 0.5 kg · 9.81 · 0.10 = 0.49 N·m > 0.2 N·m
        let g = GraspSpec::new(0.10, 0.0, 0.01, PI / 2.0, 0.03);
        let out = evaluate_grasp_exact(&bar(0.5), &Pose2::identity(), &g, &noiseless());
        assert_eq!(out.failure_reason, GraspFailure::TorqueSlip);
        assert!((noiseless().torque_limit(0.5) - 0.2).abs() < 1e-12);
        assert!((0.5 * GRAVITY * 0.10 - 0.4905).abs() < 1e-12);
    }

    #[test]
    fn too_wide_and_no_contact() {
        let along = GraspSpec::new(0.0, 0.0, 0.01, 0.0, 0.3);
        assert_eq!(evaluate_grasp_exact(&bar(0.3), &Pose2::identity(), &along, &noiseless()).failure_reason, GraspFailure::TooWide);
        let off = GraspSpec::new(0.5, 0.5, 0.01, 0.0, 0.03);
        assert_eq!(evaluate_grasp_exact(&bar(0.3), &Pose2::identity(), &off, &noiseless()).failure_reason, GraspFailure::NoContact);
    }

    #[test]
    fn height_gate() {
        let g = GraspSpec::new(0.0, 0.0, 0.025, PI / 2.0, 0.03);
        assert_eq!(evaluate_grasp_exact(&bar(0.3), &Pose2::identity(), &g, &noiseless()).failure_reason, GraspFailure::HeightMiss);
        let g = GraspSpec::new(0.0, 0.0, 0.0, PI / 2.0, 0.03);
        assert_eq!(evaluate_grasp_exact(&bar(0.3), &Pose2::identity(), &g, &noiseless()).failure_reason, GraspFailure::HeightMiss);
    }

    #[test]
    fn friction_cone_rejects_slanted_axis() {
        let g = GraspSpec::new(0.0, 0.0, 0.01, PI / 2.0 + 0.7, 0.03);
        assert_eq!(evaluate_grasp_exact(&bar(0.3), &Pose2::identity(), &g, &noiseless()).failure_reason, GraspFailure::FrictionCone);
    }

    #[test]
    fn axis_helpers() {
        assert!((normalize_axis(-0.1) - (PI - 0.1)).abs() < 1e-12);
        assert!((axis_angle_diff(0.05, PI - 0.05) - 0.1).abs() < 1e-12);
    }
}
