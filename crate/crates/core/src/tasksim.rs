//! Scene sampling and closed-form execution of the sweeping and hammering
//! primitives.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    arc_first_contact, mass_properties, sweep_corridor, CompositeShape, ConvexPolygon, Pose2, Vec2,
};
use crate::depthcam::{render_depth, CameraModel, DepthObservation};
use crate::graspsim::{
    evaluate_grasp, sample_antipodal_candidates_with, GraspOutcome, GraspSpec, GripperModel, SamplerConfig, GRAVITY,
};
use crate::procgen::ToolShape;
use crate::rng::{derive_seed, rng_from, tag, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sweep,
    Hammer,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::Sweep, TaskKind::Hammer];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Sweep => "sweep",
            TaskKind::Hammer => "hammer",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        TaskKind::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sweep" => Ok(TaskKind::Sweep),
            "hammer" => Ok(TaskKind::Hammer),
            other => Err(Error::config("task", format!("unknown task `{other}` (expected sweep or hammer)"))),
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` on the table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }

    fn sample(&self, rng: &mut Rng) -> Vec2 {
        Vec2::new(rng.random_range(self.x[0]..=self.x[1]), rng.random_range(self.y[0]..=self.y[1]))
    }

    fn is_valid(&self) -> bool {
        self.x[0] <= self.x[1] && self.y[0] <= self.y[1] && self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableConfig {
    /// Full table is `[-half_x, half_x] × [-half_y, half_y]`; the grasping
    /// region is the left half, the manipulation region the right half.
    pub half_x: f64,
    pub half_y: f64,
    pub grasp_region_center: [f64; 2],
    /// Tool COM drop offset bound around the grasping region center.
    pub drop_jitter: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            half_x: 0.61,
            half_y: 0.38,
            grasp_region_center: [-0.305, 0.0],
            drop_jitter: 0.06,
        }
    }
}

impl TableConfig {
    pub fn manipulation_region(&self) -> Bounds {
        Bounds {
            x: [0.0, self.half_x],
            y: [-self.half_y, self.half_y],
        }
    }

    pub fn table_edge_y(&self) -> f64 {
        self.half_y
    }
}

/// Which tool boundary counts as the leading edge under a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// Frontmost boundary of any part; every column must meet the tool.
    AllParts,
    /// Boundary of the touching part only; it must span the target's center line.
    ContactPart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConstants {
    pub target_radius: f64,
    pub target_height: f64,
    pub target_mass: f64,
    pub two_target_probability: f64,
    pub target_region: Bounds,
    pub sweep_length: f64,
    pub corridor_margin: f64,
    pub engage_min: f64,
    pub flatness_tolerance: f64,
    pub flatness_columns: usize,
    pub profile: ProfileMode,
    pub table_friction: f64,
    pub push_offset: f64,
    /// Gripper reference sits this far behind (−y) the mean target position.
    pub standoff: f64,
}

impl Default for SweepConstants {
    fn default() -> Self {
        SweepConstants {
            target_radius: 0.033,
            target_height: 0.12,
            target_mass: 0.05,
            two_target_probability: 0.3,
            target_region: Bounds {
                x: [0.22, 0.38],
                y: [0.12, 0.27],
            },
            sweep_length: 0.4,
            corridor_margin: 0.005,
            engage_min: 0.005,
            flatness_tolerance: 0.02,
            flatness_columns: 33,
            profile: ProfileMode::ContactPart,
            table_friction: 0.5,
            push_offset: 1.5,
            standoff: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HammerConstants {
    pub peg_radius: f64,
    /// Vertical band of the peg head above the table.
    pub peg_z_band: [f64; 2],
    pub remaining_depth: f64,
    pub kappa: f64,
    pub omega: f64,
    pub arc: f64,
    pub direction_tolerance: f64,
    pub slip_factor: f64,
    pub engage_min: f64,
    pub peg_region: Bounds,
    /// Maximum deviation of the peg axis from +x.
    pub axis_jitter: f64,
    /// Slot block footprint (along axis, across axis) and its gap to the peg head.
    pub slot_size: [f64; 2],
    pub slot_gap: f64,
    /// Gripper reference: this far from the peg, perpendicular to its axis.
    pub nominal_arm: f64,
    /// Gripper yaw at zero action, relative to the peg axis.
    pub nominal_yaw: f64,
}

impl Default for HammerConstants {
    fn default() -> Self {
        HammerConstants {
            peg_radius: 0.01,
            peg_z_band: [0.01, 0.03],
            remaining_depth: 0.00025,
            kappa: 0.004,
            omega: TAU,
            arc: FRAC_PI_2,
            direction_tolerance: 25f64.to_radians(),
            slip_factor: 10.0,
            engage_min: 0.005,
            peg_region: Bounds {
                x: [0.15, 0.40],
                y: [-0.15, 0.10],
            },
            axis_jitter: PI / 6.0,
            slot_size: [0.09, 0.08],
            slot_gap: 0.002,
            nominal_arm: 0.12,
            nominal_yaw: 0.75 * PI,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConstants {
    pub table: TableConfig,
    pub sweep: SweepConstants,
    pub hammer: HammerConstants,
}

impl TaskConstants {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        let h = &self.hammer;
        let positive = [
            ("task.sweep.target_radius", s.target_radius),
            ("task.sweep.target_height", s.target_height),
            ("task.sweep.target_mass", s.target_mass),
            ("task.sweep.sweep_length", s.sweep_length),
            ("task.sweep.flatness_tolerance", s.flatness_tolerance),
            ("task.hammer.peg_radius", h.peg_radius),
            ("task.hammer.remaining_depth", h.remaining_depth),
            ("task.hammer.kappa", h.kappa),
            ("task.hammer.omega", h.omega),
            ("task.hammer.slip_factor", h.slip_factor),
            ("task.table.half_x", self.table.half_x),
            ("task.table.half_y", self.table.half_y),
        ];
        for (f, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(f, "must be positive"));
            }
        }
        if !(h.arc > 0.0 && h.arc <= FRAC_PI_2 + 1e-12) {
            return Err(Error::config("task.hammer.arc", "must lie in (0, pi/2]"));
        }
        if !(0.0..=1.0).contains(&s.two_target_probability) {
            return Err(Error::config("task.sweep.two_target_probability", "must lie in [0, 1]"));
        }
        if s.flatness_columns < 2 {
            return Err(Error::config("task.sweep.flatness_columns", "must be >= 2"));
        }
        let manip = self.table.manipulation_region();
        for (f, b) in [("task.sweep.target_region", s.target_region), ("task.hammer.peg_region", h.peg_region)] {
            if !b.is_valid() || !manip.contains(Vec2::new(b.x[0], b.y[0])) || !manip.contains(Vec2::new(b.x[1], b.y[1])) {
                return Err(Error::config(f, "must be a nonempty box inside the manipulation region"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub center: Vec2,
    pub radius: f64,
    pub height: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepScene {
    pub targets: Vec<Target>,
    pub table_edge_y: f64,
    pub manipulation_region: Bounds,
}

impl SweepScene {
    pub fn mean_target(&self) -> Vec2 {
        let n = self.targets.len() as f64;
        self.targets.iter().fold(Vec2::ZERO, |a, t| a + t.center) * (1.0 / n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HammerScene {
    pub peg: Vec2,
    pub peg_radius: f64,
    pub axis: Vec2,
    pub remaining_depth: f64,
    pub slot: ConvexPolygon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskScene {
    Sweep(SweepScene),
    Hammer(HammerScene),
}

impl TaskScene {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskScene::Sweep(_) => TaskKind::Sweep,
            TaskScene::Hammer(_) => TaskKind::Hammer,
        }
    }
}

pub const ACTION_POS_LIMIT: f64 = 0.08;
pub const ACTION_ANGLE_LIMIT: f64 = FRAC_PI_8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub aphi: f64,
}

impl ActionSpec {
    pub fn new(ax: f64, ay: f64, az: f64, aphi: f64) -> Self {
        ActionSpec { ax, ay, az, aphi }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.ax, self.ay, self.az, self.aphi]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ActionSpec::new(a[0], a[1], a[2], a[3])
    }

    /// Clamped to the executable ranges; non-finite components become 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64, l: f64| if v.is_finite() { v.clamp(-l, l) } else { 0.0 };
        ActionSpec::new(
            c(self.ax, ACTION_POS_LIMIT),
            c(self.ay, ACTION_POS_LIMIT),
            c(self.az, ACTION_POS_LIMIT),
            c(self.aphi, ACTION_ANGLE_LIMIT),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFailure {
    None,
    StartCollision,
    Missed,
    UnstableContact,
    TorqueSlip,
    InsufficientImpulse,
    WrongDirection,
    Partial,
    /// The grasp failed, so the task was never attempted.
    GraspFailed,
}

impl TaskFailure {
    pub const ALL: [TaskFailure; 9] = [
        TaskFailure::None,
        TaskFailure::StartCollision,
        TaskFailure::Missed,
        TaskFailure::UnstableContact,
        TaskFailure::TorqueSlip,
        TaskFailure::InsufficientImpulse,
        TaskFailure::WrongDirection,
        TaskFailure::Partial,
        TaskFailure::GraspFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFailure::None => "none",
            TaskFailure::StartCollision => "start_collision",
            TaskFailure::Missed => "missed",
            TaskFailure::UnstableContact => "unstable_contact",
            TaskFailure::TorqueSlip => "torque_slip",
            TaskFailure::InsufficientImpulse => "insufficient_impulse",
            TaskFailure::WrongDirection => "wrong_direction",
            TaskFailure::Partial => "partial",
            TaskFailure::GraspFailed => "grasp_failed",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        TaskFailure::ALL.get(c as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutcome {
    pub success: bool,
    pub failure_reason: TaskFailure,
    pub diagnostics: Vec<(&'static str, f64)>,
}

impl TaskOutcome {
    fn fail(reason: TaskFailure, diagnostics: Vec<(&'static str, f64)>) -> Self {
        TaskOutcome {
            success: false,
            failure_reason: reason,
            diagnostics,
        }
    }

    fn ok(diagnostics: Vec<(&'static str, f64)>) -> Self {
        TaskOutcome {
            success: true,
            failure_reason: TaskFailure::None,
            diagnostics,
        }
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

/// Drops the tool with its COM near the grasping region center at a uniform rotation.
pub fn sample_tool_pose(rng: &mut Rng, table: &TableConfig) -> Pose2 {
    let j = table.drop_jitter;
    let c: Vec2 = table.grasp_region_center.into();
    Pose2::new(
        c.x + rng.random_range(-j..=j),
        c.y + rng.random_range(-j..=j),
        rng.random_range(0.0..TAU),
    )
}

const MAX_SCENE_ATTEMPTS: usize = 100;

pub fn sample_sweep_scene(rng: &mut Rng, constants: &TaskConstants) -> Result<SweepScene> {
    let s = &constants.sweep;
    let count = if rng.random::<f64>() < s.two_target_probability { 2 } else { 1 };
    let mut targets: Vec<Target> = Vec::new();
    let mut attempts = 0;
    while targets.len() < count {
        attempts += 1;
        if attempts > MAX_SCENE_ATTEMPTS {
            return Err(Error::Sampling {
                what: "sweep targets".into(),
                attempts: MAX_SCENE_ATTEMPTS,
            });
        }
        let c = s.target_region.sample(rng);
        if targets.iter().all(|t| t.center.distance(c) > 2.0 * s.target_radius) {
            targets.push(Target {
                center: c,
                radius: s.target_radius,
                height: s.target_height,
                mass: s.target_mass,
            });
        }
    }
    Ok(SweepScene {
        targets,
        table_edge_y: constants.table.table_edge_y(),
        manipulation_region: constants.table.manipulation_region(),
    })
}

pub fn sample_hammer_scene(rng: &mut Rng, constants: &TaskConstants) -> Result<HammerScene> {
    let h = &constants.hammer;
    let manip = constants.table.manipulation_region();
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let peg = h.peg_region.sample(rng);
        let axis = Vec2::from_angle(rng.random_range(-h.axis_jitter..=h.axis_jitter));
        let axis = axis * (1.0 / axis.norm());
        let [len, wid] = h.slot_size;
        let start = h.peg_radius + h.slot_gap;
        let frame = Pose2::new(peg.x, peg.y, axis.angle());
        let slot = ConvexPolygon::rectangle(len, wid, 0.05)?
            .translated(Vec2::new(start + len / 2.0, 0.0))
            .transformed(&frame);
        if slot.vertices().iter().all(|&v| manip.contains(v)) {
            return Ok(HammerScene {
                peg,
                peg_radius: h.peg_radius,
                axis,
                remaining_depth: h.remaining_depth,
                slot,
            });
        }
    }
    Err(Error::Sampling {
        what: "hammer slot".into(),
        attempts: MAX_SCENE_ATTEMPTS,
    })
}

pub fn sample_scene(task: TaskKind, rng: &mut Rng, constants: &TaskConstants) -> Result<TaskScene> {
    Ok(match task {
        TaskKind::Sweep => TaskScene::Sweep(sample_sweep_scene(rng, constants)?),
        TaskKind::Hammer => TaskScene::Hammer(sample_hammer_scene(rng, constants)?),
    })
}

/// Closing axis after the jaws seat flush on the contacted faces. Falls back
/// to the commanded axis when the grasp carries no contacts.
pub fn seated_axis(realized: &GraspSpec) -> f64 {
    let axis = realized.axis();
    let Some([pos, neg]) = &realized.contacts else {
        return realized.gphi;
    };
    let seated = pos.normal - neg.normal;
    if seated.norm() < 1e-9 || seated.dot(axis) <= 0.0 {
        return realized.gphi;
    }
    seated.angle()
}

/// Tool pose relative to the gripper frame implied by a realized grasp.
/// The gripper frame has its x-axis along the seated grasp axis.
pub fn tool_in_gripper(tool_pose: &Pose2, realized: &GraspSpec) -> Pose2 {
    Pose2::new(realized.gx, realized.gy, seated_axis(realized)).inverse().compose(tool_pose)
}

/// Start pose of the gripper for a task, before the tool is attached.
pub fn gripper_start(scene: &TaskScene, action: &ActionSpec, constants: &TaskConstants) -> Pose2 {
    let a = action.clamped();
    match scene {
        TaskScene::Sweep(s) => {
            let r = s.mean_target() + Vec2::new(0.0, -constants.sweep.standoff);
            Pose2::new(r.x + a.ax, r.y + a.ay, a.aphi)
        }
        TaskScene::Hammer(h) => {
            let theta = h.axis.angle();
            let r = h.peg + h.axis.perp() * constants.hammer.nominal_arm + Vec2::new(a.ax, a.ay).rotated(theta);
            Pose2::new(r.x, r.y, theta + constants.hammer.nominal_yaw + a.aphi)
        }
    }
}

struct Column {
    x: f64,
    top: f64,
    gap: f64,
    part: usize,
}

/// Highest tool boundary at column `x` lying under `below`, with its part.
fn column_profile(parts: &[ConvexPolygon], x: f64, below: f64) -> Option<(f64, usize)> {
    parts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.vertical_extent(x).map(|(_, hi)| (hi, i)))
        .filter(|&(hi, _)| hi <= below + 1e-12)
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

fn spread_of(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Sweeps the held tool 0.4 m along +y from the action's start pose.
pub fn simulate_sweep(
    tool: &CompositeShape,
    tool_in_grip: &Pose2,
    scene: &SweepScene,
    action: &ActionSpec,
    gripper: &GripperModel,
    constants: &TaskConstants,
) -> TaskOutcome {
    let c = &constants.sweep;
    let a = action.clamped();
    let grip = gripper_start(&TaskScene::Sweep(scene.clone()), &a, constants);
    let pose = grip.compose(tool_in_grip);
    let parts = tool.posed_parts(&pose);
    let mut diag = Vec::new();
    for t in &scene.targets {
        if parts.iter().any(|p| p.overlaps_disk(t.center, t.radius)) {
            return TaskOutcome::fail(TaskFailure::StartCollision, diag);
        }
    }
    let dir = Vec2::new(0.0, 1.0);
    let corridor = sweep_corridor(tool, &pose, dir, c.sweep_length);
    let tau_max = gripper.torque_limit(tool.friction());
    let lift = a.az.max(0.0);
    for (k, t) in scene.targets.iter().enumerate() {
        // (i) center inside the corridor with lateral margin
        let m = Vec2::new(c.corridor_margin, 0.0);
        if !(corridor.contains(t.center - m) && corridor.contains(t.center + m)) {
            diag.push(("target", k as f64));
            return TaskOutcome::fail(TaskFailure::Missed, diag);
        }
        // leading profile under the target: per column, the frontmost tool
        // boundary below the disk and the gap to it
        let n = c.flatness_columns;
        let mut columns: Vec<Option<Column>> = Vec::with_capacity(n);
        for i in 0..n {
            let x = t.center.x - t.radius + 2.0 * t.radius * i as f64 / (n - 1) as f64;
            let chord = (t.radius * t.radius - (x - t.center.x).powi(2)).max(0.0).sqrt();
            let bottom = t.center.y - chord;
            columns.push(column_profile(&parts, x, bottom).map(|(top, part)| Column {
                x,
                top,
                gap: bottom - top,
                part,
            }));
        }
        let Some(contact) = columns.iter().flatten().min_by(|a, b| {
            a.gap.total_cmp(&b.gap).then((a.x - t.center.x).abs().total_cmp(&(b.x - t.center.x).abs()))
        }) else {
            return TaskOutcome::fail(TaskFailure::Missed, diag);
        };
        let gap = contact.gap;
        if gap > c.sweep_length {
            return TaskOutcome::fail(TaskFailure::Missed, diag);
        }
        diag.push(("contact_gap", gap));
        // (ii) vertical engagement
        let contact_height = tool.parts()[contact.part].height();
        if !(a.az < t.height && contact_height >= lift + c.engage_min) {
            diag.push(("contact_height", contact_height));
            return TaskOutcome::fail(TaskFailure::Missed, diag);
        }
        // (iii) flat leading edge across the target's width
        let spread = match c.profile {
            ProfileMode::AllParts => {
                if columns.iter().any(Option::is_none) {
                    f64::INFINITY
                } else {
                    spread_of(columns.iter().flatten().map(|col| col.top))
                }
            }
            ProfileMode::ContactPart => {
                let center = &columns[n / 2];
                if center.as_ref().is_none_or(|col| col.part != contact.part) {
                    f64::INFINITY
                } else {
                    spread_of(columns.iter().flatten().filter(|col| col.part == contact.part).map(|col| col.top))
                }
            }
        };
        diag.push(("profile_spread", spread));
        if spread > c.flatness_tolerance {
            return TaskOutcome::fail(TaskFailure::UnstableContact, diag);
        }
        let cx = contact.x;
        // (iv) pushing torque about the grasp center
        let arm = (cx - grip.x).abs();
        let force = c.table_friction * t.mass * GRAVITY + c.push_offset;
        diag.push(("push_torque", force * arm));
        if force * arm > tau_max {
            return TaskOutcome::fail(TaskFailure::TorqueSlip, diag);
        }
        // (v) pushed past the table edge
        let final_y = t.center.y + c.sweep_length - gap;
        diag.push(("final_y", final_y));
        if final_y <= scene.table_edge_y {
            return TaskOutcome::fail(TaskFailure::Partial, diag);
        }
    }
    TaskOutcome::ok(diag)
}

/// Rotates the held tool 90° counter-clockwise about the grasp center and
/// resolves the strike on the peg head.
#[allow(clippy::too_many_arguments)]
pub fn simulate_hammer(
    tool: &CompositeShape,
    tool_in_grip: &Pose2,
    scene: &HammerScene,
    action: &ActionSpec,
    gripper: &GripperModel,
    constants: &TaskConstants,
    omega: f64,
) -> TaskOutcome {
    let h = &constants.hammer;
    let a = action.clamped();
    let grip = gripper_start(&TaskScene::Hammer(scene.clone()), &a, constants);
    let pose = grip.compose(tool_in_grip);
    let parts = tool.posed_parts(&pose);
    let mut diag = Vec::new();
    if parts.iter().any(|p| p.overlaps(&scene.slot)) {
        return TaskOutcome::fail(TaskFailure::StartCollision, diag);
    }
    let center = grip.translation();
    let Some(hit) = arc_first_contact(tool, center, &pose, scene.peg, scene.peg_radius, h.arc) else {
        return TaskOutcome::fail(TaskFailure::Missed, diag);
    };
    if hit.is_pre_contact() {
        return TaskOutcome::fail(TaskFailure::StartCollision, diag);
    }
    diag.push(("contact_angle", hit.angle));
    diag.push(("moment_arm", hit.moment_arm));
    // vertical overlap of the striking part with the peg head
    let lift = a.az.max(0.0);
    let part_h = tool.parts()[hit.part].height();
    let overlap = (lift + part_h).min(h.peg_z_band[1]) - lift.max(h.peg_z_band[0]);
    if overlap < h.engage_min {
        diag.push(("vertical_overlap", overlap));
        return TaskOutcome::fail(TaskFailure::Missed, diag);
    }
    let r = hit.point - center;
    let l = hit.moment_arm;
    let vel_dir = r.perp() * (1.0 / l);
    let angle = vel_dir.dot(scene.axis).clamp(-1.0, 1.0).acos();
    diag.push(("strike_angle", angle));
    if angle > h.direction_tolerance {
        return TaskOutcome::fail(TaskFailure::WrongDirection, diag);
    }
    let mp = mass_properties(tool);
    let grasp_body = tool_in_grip.apply_inverse(Vec2::ZERO);
    let i_g = mp.inertia_about(grasp_body);
    let m_eff = i_g / (l * l);
    let v = omega * l;
    let tau_max = gripper.torque_limit(tool.friction());
    diag.push(("inertia_grasp", i_g));
    if m_eff * v * l > h.slip_factor * tau_max / omega {
        return TaskOutcome::fail(TaskFailure::TorqueSlip, diag);
    }
    let depth = h.kappa * m_eff * v;
    diag.push(("drive_depth", depth));
    if depth < scene.remaining_depth {
        return TaskOutcome::fail(TaskFailure::InsufficientImpulse, diag);
    }
    TaskOutcome::ok(diag)
}

/// Runs the primitive for whichever task the scene encodes.
pub fn simulate_task(
    tool: &CompositeShape,
    tool_in_grip: &Pose2,
    scene: &TaskScene,
    action: &ActionSpec,
    gripper: &GripperModel,
    constants: &TaskConstants,
) -> TaskOutcome {
    match scene {
        TaskScene::Sweep(s) => simulate_sweep(tool, tool_in_grip, s, action, gripper, constants),
        TaskScene::Hammer(h) => simulate_hammer(tool, tool_in_grip, h, action, gripper, constants, constants.hammer.omega),
    }
}

/// Half-ranges of the uniformly random action used for exploration.
pub const RANDOM_ACTION_POS: f64 = 0.05;
pub const RANDOM_ACTION_ANGLE: f64 = PI / 20.0;

pub fn random_action(rng: &mut Rng) -> ActionSpec {
    let p = RANDOM_ACTION_POS;
    let a = RANDOM_ACTION_ANGLE;
    ActionSpec::new(
        rng.random_range(-p..=p),
        rng.random_range(-p..=p),
        rng.random_range(-p..=p),
        rng.random_range(-a..=a),
    )
}

/// Everything the simulator needs besides the tool and the policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub camera: CameraModel,
    pub gripper: GripperModel,
    pub sampler: SamplerConfig,
    pub task: TaskConstants,
    pub n_candidates: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            camera: CameraModel::default(),
            gripper: GripperModel::default(),
            sampler: SamplerConfig::default(),
            task: TaskConstants::default(),
            n_candidates: 200,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.gripper.validate()?;
        self.task.validate()?;
        if self.n_candidates == 0 {
            return Err(Error::config("sim.n_candidates", "must be >= 1"));
        }
        Ok(())
    }
}

/// Independent seed streams of one episode. Methods compared on the same
/// episode share all four.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeSeeds {
    pub scene: u64,
    pub camera: u64,
    pub noise: u64,
    pub policy: u64,
}

impl EpisodeSeeds {
    pub fn derive(parts: &[u64]) -> Self {
        let base = derive_seed(parts);
        EpisodeSeeds {
            scene: derive_seed(&[base, tag("scene")]),
            camera: derive_seed(&[base, tag("camera")]),
            noise: derive_seed(&[base, tag("noise")]),
            policy: derive_seed(&[base, tag("policy")]),
        }
    }
}

/// Dropped tool, task scene, observation and antipodal candidates.
#[derive(Clone, Debug)]
pub struct PreparedEpisode {
    pub task: TaskKind,
    pub tool_pose: Pose2,
    pub scene: TaskScene,
    pub obs: DepthObservation,
    pub candidates: Vec<GraspSpec>,
}

pub fn prepare_episode(tool: &ToolShape, task: TaskKind, seeds: &EpisodeSeeds, config: &SimConfig) -> Result<PreparedEpisode> {
    let mut scene_rng = rng_from(&[seeds.scene]);
    let tool_pose = sample_tool_pose(&mut scene_rng, &config.task.table);
    let scene = sample_scene(task, &mut scene_rng, &config.task)?;
    let mut cam_rng = rng_from(&[seeds.camera]);
    let obs = render_depth(&[(&tool.shape, tool_pose)], &config.camera, &mut cam_rng);
    let candidates = sample_antipodal_candidates_with(&obs, &config.gripper, &config.sampler, config.n_candidates, &mut cam_rng);
    Ok(PreparedEpisode {
        task,
        tool_pose,
        scene,
        obs,
        candidates,
    })
}

#[derive(Clone, Debug)]
pub struct ExecutedEpisode {
    pub grasp: GraspOutcome,
    pub action: ActionSpec,
    pub task: TaskOutcome,
}

impl ExecutedEpisode {
    pub fn s_g(&self) -> bool {
        self.grasp.success
    }

    pub fn s_t(&self) -> bool {
        self.task.success
    }
}

/// Executes the commanded grasp with noise drawn from `seeds.noise`; on
/// success asks `action_policy` for the start offset and runs the task.
pub fn execute_episode(
    tool: &ToolShape,
    prepared: &PreparedEpisode,
    grasp: &GraspSpec,
    action_policy: impl FnOnce() -> ActionSpec,
    seeds: &EpisodeSeeds,
    config: &SimConfig,
) -> ExecutedEpisode {
    let mut noise = rng_from(&[seeds.noise]);
    let outcome = evaluate_grasp(&tool.shape, &prepared.tool_pose, grasp, &config.gripper, &mut noise);
    if !outcome.success {
        return ExecutedEpisode {
            grasp: outcome,
            action: ActionSpec::default(),
            task: TaskOutcome::fail(TaskFailure::GraspFailed, Vec::new()),
        };
    }
    let action = action_policy().clamped();
    let held = tool_in_gripper(&prepared.tool_pose, &outcome.realized);
    let task = simulate_task(&tool.shape, &held, &prepared.scene, &action, &config.gripper, &config.task);
    ExecutedEpisode {
        grasp: outcome,
        action,
        task,
    }
}
