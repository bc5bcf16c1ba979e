//! Self-supervised episode collection and the binary episode dataset.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::depthcam::{dequantize_depth, extract_crop_pair, gripper_depth, quantize_depth};
use crate::graspselect::{cem_select_scored, nms_diverse_scored, score_candidates_with, Objective, ScoredGrasp, SelectionConfig};
use crate::graspsim::{GraspFailure, GraspSpec};
use crate::neural::net::{forward, Heads, NetInput, NetOutput, TogNetParams};
use crate::neural::policy::{sample_action, PolicyConfig};
use crate::procgen::{ToolLibrary, ToolShape};
use crate::rng::{rng_from, tag};
use crate::tasksim::{
    execute_episode, prepare_episode, random_action, ActionSpec, EpisodeSeeds, PreparedEpisode, SimConfig, TaskFailure, TaskKind,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionPlan {
    pub rounds: usize,
    pub trials_per_round: usize,
    /// Probability of an exploratory (NMS-diverse) grasp.
    pub epsilon1: f64,
    /// Probability of a uniformly random action.
    pub epsilon2: f64,
    pub master_seed: u64,
}

impl Default for CollectionPlan {
    fn default() -> Self {
        CollectionPlan {
            rounds: 3,
            trials_per_round: 5_000,
            epsilon1: 0.2,
            epsilon2: 0.2,
            master_seed: 0,
        }
    }
}

impl CollectionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("collection.rounds", "must be >= 1"));
        }
        for (f, e) in [("collection.epsilon1", self.epsilon1), ("collection.epsilon2", self.epsilon2)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(f, "must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspSource {
    Cem,
    NmsDiverse,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Policy,
    Random,
}

pub const TOOL_ID_BYTES: usize = 32;
pub const CROP_LARGE: usize = 64;
pub const CROP_SMALL: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode_index: u64,
    pub round_index: u32,
    pub tool_id: String,
    pub task: TaskKind,
    pub seeds: EpisodeSeeds,
    /// Commanded grasp.
    pub grasp: GraspSpec,
    pub grasp_source: GraspSource,
    pub action: ActionSpec,
    pub action_source: ActionSource,
    pub s_g: bool,
    pub s_t: bool,
    pub grasp_failure: GraspFailure,
    pub task_failure: TaskFailure,
    /// The sampler found no candidate; the episode was recorded as a failed
    /// grasp without execution.
    pub no_candidates: bool,
    /// Gripper depth in metres.
    pub z: f64,
    /// Quantized depth, row-major, [`CROP_LARGE`]².
    pub crop64: Vec<u16>,
    /// Central window of `crop64`.
    pub crop32: Vec<u16>,
}

impl EpisodeRecord {
    pub fn net_input(&self, background: f64) -> NetInput {
        let large: Vec<f64> = self.crop64.iter().map(|&q| dequantize_depth(q)).collect();
        NetInput::from_raw(&large, CROP_LARGE, CROP_SMALL, background, self.z)
    }

    pub fn labels(&self) -> crate::neural::loss::Labels {
        crate::neural::loss::Labels {
            s_g: self.s_g,
            s_t: self.s_t,
            action: self.action.to_array(),
        }
    }
}

/// Everything an episode needs besides its indices.
#[derive(Clone, Copy)]
pub struct CollectContext<'a> {
    pub library: &'a ToolLibrary,
    pub sim: &'a SimConfig,
    pub selection: &'a SelectionConfig,
    pub policy: &'a PolicyConfig,
    pub task: TaskKind,
}

/// How grasps and actions are chosen in one collection stage.
#[derive(Clone, Copy)]
pub enum Strategy<'a> {
    /// Uniform candidate, random action; no network.
    Random,
    /// Diverse grasps from the grasp network, random actions.
    Explore(&'a TogNetParams),
    /// ε-greedy over CEM / NMS-diverse grasps and policy / random actions.
    EpsilonGreedy(&'a TogNetParams),
}

pub fn episode_seeds(plan: &CollectionPlan, task: TaskKind, round: u32, index: u64) -> EpisodeSeeds {
    EpisodeSeeds::derive(&[plan.master_seed, tag("collect"), task.code() as u64, round as u64, index])
}

fn choice_rng(seeds: &EpisodeSeeds) -> crate::rng::Rng {
    rng_from(&[seeds.policy, tag("choice")])
}

fn exploration_draw(plan: &CollectionPlan, rng: &mut crate::rng::Rng) -> (bool, bool) {
    let g = rng.random::<f64>() < plan.epsilon1;
    let a = rng.random::<f64>() < plan.epsilon2;
    (g, a)
}

/// Whether an ε-greedy episode explores its grasp and its action. Depends on
/// the seeds only, so the mixture can be audited without simulating.
pub fn exploration_flags(plan: &CollectionPlan, seeds: &EpisodeSeeds) -> (bool, bool) {
    exploration_draw(plan, &mut choice_rng(seeds))
}

pub fn pick_tool<'a>(library: &'a ToolLibrary, seeds: &EpisodeSeeds) -> &'a ToolShape {
    let mut rng = rng_from(&[seeds.scene, tag("tool")]);
    &library.tools[rng.random_range(0..library.tools.len())]
}

/// Placeholder grasp stored when the sampler finds no antipodal candidate;
/// it is never executed.
fn placeholder_grasp(prep: &PreparedEpisode) -> GraspSpec {
    let c = crate::geometry::Vec2::new(prep.tool_pose.x, prep.tool_pose.y);
    let h = prep.obs.surface_height(c).max(0.0);
    GraspSpec::new(c.x, c.y, 0.5 * h, prep.tool_pose.theta + std::f64::consts::FRAC_PI_2, 0.0)
}

fn policy_output(params: &TogNetParams, chosen: &ScoredGrasp) -> Result<NetOutput> {
    if chosen.action_mean.iter().all(|v| v.is_finite()) {
        return Ok(NetOutput {
            q_g: chosen.q_g,
            q_tg: chosen.q_tg,
            q_t: chosen.q_t,
            action_mean: chosen.action_mean,
            logit_g: f64::NAN,
            logit_tg: f64::NAN,
        });
    }
    Ok(forward(params, std::slice::from_ref(&chosen.input))?[0])
}

pub fn run_episode(ctx: &CollectContext<'_>, plan: &CollectionPlan, strategy: Strategy<'_>, round: u32, index: u64) -> Result<EpisodeRecord> {
    let seeds = episode_seeds(plan, ctx.task, round, index);
    let tool = pick_tool(ctx.library, &seeds);
    let prep = prepare_episode(tool, ctx.task, &seeds, ctx.sim)?;
    let mut choice = choice_rng(&seeds);
    let (explore_grasp, explore_action) = exploration_draw(plan, &mut choice);
    if prep.candidates.is_empty() {
        let grasp = placeholder_grasp(&prep);
        let (c64, c32) = extract_crop_pair(&prep.obs, &grasp);
        return Ok(EpisodeRecord {
            episode_index: index,
            round_index: round,
            tool_id: tool.id.clone(),
            task: ctx.task,
            seeds,
            z: gripper_depth(&prep.obs, &grasp),
            grasp,
            grasp_source: GraspSource::Random,
            action: ActionSpec::default(),
            action_source: ActionSource::Random,
            s_g: false,
            s_t: false,
            grasp_failure: GraspFailure::NoContact,
            task_failure: TaskFailure::GraspFailed,
            no_candidates: true,
            crop64: c64.iter().map(|&d| quantize_depth(d)).collect(),
            crop32: c32.iter().map(|&d| quantize_depth(d)).collect(),
        });
    }
    let (grasp, grasp_source, action, action_source) = {
        match strategy {
            Strategy::Random => {
                let g = prep.candidates[choice.random_range(0..prep.candidates.len())].clone();
                (g, GraspSource::Random, random_action(&mut choice), ActionSource::Random)
            }
            Strategy::Explore(params) => {
                let scored = score_candidates_with(params, &prep.obs, &prep.candidates, Heads::GraspOnly)?;
                let g = nms_diverse_scored(&scored, ctx.selection, &mut choice).grasp;
                (g, GraspSource::NmsDiverse, random_action(&mut choice), ActionSource::Random)
            }
            Strategy::EpsilonGreedy(params) => {
                let (chosen, source) = if explore_grasp {
                    let scored = score_candidates_with(params, &prep.obs, &prep.candidates, Heads::GraspOnly)?;
                    (nms_diverse_scored(&scored, ctx.selection, &mut choice), GraspSource::NmsDiverse)
                } else {
                    let scored = score_candidates_with(params, &prep.obs, &prep.candidates, Heads::All)?;
                    (cem_select_scored(&scored, Objective::QT, ctx.selection, &mut choice).best, GraspSource::Cem)
                };
                let (a, asrc) = if explore_action {
                    (random_action(&mut choice), ActionSource::Random)
                } else {
                    let out = policy_output(params, &chosen)?;
                    (sample_action(&out, ctx.policy, &mut choice).action, ActionSource::Policy)
                };
                (chosen.grasp, source, a, asrc)
            }
        }
    };
    let exec = execute_episode(tool, &prep, &grasp, || action, &seeds, ctx.sim);
    let (c64, c32) = extract_crop_pair(&prep.obs, &grasp);
    let z = gripper_depth(&prep.obs, &grasp);
    Ok(EpisodeRecord {
        episode_index: index,
        round_index: round,
        tool_id: tool.id.clone(),
        task: ctx.task,
        seeds,
        grasp,
        grasp_source,
        action: action.clamped(),
        action_source,
        s_g: exec.s_g(),
        s_t: exec.s_t(),
        grasp_failure: exec.grasp.failure_reason,
        task_failure: exec.task.failure_reason,
        no_candidates: false,
        z,
        crop64: c64.iter().map(|&d| quantize_depth(d)).collect(),
        crop32: c32.iter().map(|&d| quantize_depth(d)).collect(),
    })
}

fn collect(ctx: &CollectContext<'_>, plan: &CollectionPlan, strategy: Strategy<'_>, round: u32) -> Result<Vec<EpisodeRecord>> {
    use rayon::prelude::*;
    if ctx.library.is_empty() {
        return Err(Error::config("library", "is empty"));
    }
    plan.validate()?;
    (0..plan.trials_per_round as u64)
        .into_par_iter()
        .map(|i| run_episode(ctx, plan, strategy, round, i))
        .collect()
}

/// Round 0: uniform antipodal grasps and random actions, for grasp pretraining.
pub fn collect_stage0(plan: &CollectionPlan, ctx: &CollectContext<'_>) -> Result<Vec<EpisodeRecord>> {
    collect(ctx, plan, Strategy::Random, 0)
}

/// Rounds 1..: round 1 explores with diverse grasps and random actions, later
/// rounds are ε-greedy with the current model.
pub fn collect_round(round_index: u32, plan: &CollectionPlan, ctx: &CollectContext<'_>, params: &TogNetParams) -> Result<Vec<EpisodeRecord>> {
    if round_index == 0 {
        return Err(Error::config("round_index", "round 0 is collect_stage0"));
    }
    let strategy = if round_index == 1 {
        Strategy::Explore(params)
    } else {
        Strategy::EpsilonGreedy(params)
    };
    collect(ctx, plan, strategy, round_index)
}

/// Largest absolute difference (metres) between stored crops and a re-render
/// from the stored seeds.
pub fn rerender_difference(record: &EpisodeRecord, library: &ToolLibrary, sim: &SimConfig) -> Result<f64> {
    let tool = library.get(&record.tool_id).ok_or_else(|| Error::config("tool_id", format!("{} not in library", record.tool_id)))?;
    let prep = prepare_episode(tool, record.task, &record.seeds, sim)?;
    let (c64, c32) = extract_crop_pair(&prep.obs, &record.grasp);
    let diff = |fresh: &[f64], stored: &[u16]| fresh.iter().zip(stored).map(|(f, &q)| (f - dequantize_depth(q)).abs()).fold(0.0, f64::max);
    Ok(diff(&c64, &record.crop64).max(diff(&c32, &record.crop32)))
}

// ---- binary dataset -------------------------------------------------------

const MAGIC: &str = "togsim-dataset";
const VERSION: u32 = 1;

const LAYOUT: [(&str, usize); 21] = [
    ("episode_index:u64", 8),
    ("round_index:u32", 4),
    ("tool_id:utf8[32]", TOOL_ID_BYTES),
    ("task:u8", 1),
    ("scene_seed:u64", 8),
    ("camera_seed:u64", 8),
    ("noise_seed:u64", 8),
    ("policy_seed:u64", 8),
    ("grasp:f64[5] x,y,z,phi,width", 40),
    ("grasp_source:u8", 1),
    ("action:f64[4]", 32),
    ("action_source:u8", 1),
    ("s_g:u8", 1),
    ("s_t:u8", 1),
    ("grasp_failure:u8", 1),
    ("task_failure:u8", 1),
    ("no_candidates:u8", 1),
    ("z:f64", 8),
    ("crop64:u16[4096] 0.1mm", 2 * CROP_LARGE * CROP_LARGE),
    ("crop32:u16[1024] 0.1mm", 2 * CROP_SMALL * CROP_SMALL),
    ("reserved:u8[2]", 2),
];

pub const fn record_size() -> usize {
    let mut s = 0;
    let mut i = 0;
    while i < LAYOUT.len() {
        s += LAYOUT[i].1;
        i += 1;
    }
    s
}

pub const RECORD_SIZE: usize = record_size();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub task: TaskKind,
    pub plan: CollectionPlan,
    pub library_hash: String,
    pub config_hash: String,
    pub record_count: usize,
    pub record_size: usize,
    pub layout: Vec<(String, usize)>,
}

impl DatasetHeader {
    pub fn new(task: TaskKind, plan: &CollectionPlan, library_hash: u64, config_hash: &str, record_count: usize) -> Self {
        DatasetHeader {
            format: MAGIC.into(),
            version: VERSION,
            task,
            plan: plan.clone(),
            library_hash: format!("{library_hash:016x}"),
            config_hash: config_hash.into(),
            record_count,
            record_size: RECORD_SIZE,
            layout: LAYOUT.iter().map(|(s, n)| (s.to_string(), *n)).collect(),
        }
    }
}

fn encode(r: &EpisodeRecord, out: &mut Vec<u8>) -> Result<()> {
    let start = out.len();
    let id = r.tool_id.as_bytes();
    if id.len() > TOOL_ID_BYTES {
        return Err(Error::config("tool_id", format!("{} is longer than {TOOL_ID_BYTES} bytes", r.tool_id)));
    }
    if r.crop64.len() != CROP_LARGE * CROP_LARGE || r.crop32.len() != CROP_SMALL * CROP_SMALL {
        return Err(Error::Shape {
            layer: "dataset.crop".into(),
            detail: format!("crops of {} / {} values", r.crop64.len(), r.crop32.len()),
        });
    }
    out.extend_from_slice(&r.episode_index.to_le_bytes());
    out.extend_from_slice(&r.round_index.to_le_bytes());
    out.extend_from_slice(id);
    out.extend(std::iter::repeat_n(0u8, TOOL_ID_BYTES - id.len()));
    out.push(r.task.code());
    for s in [r.seeds.scene, r.seeds.camera, r.seeds.noise, r.seeds.policy] {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for v in [r.grasp.gx, r.grasp.gy, r.grasp.gz, r.grasp.gphi, r.grasp.width] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(r.grasp_source as u8);
    for v in r.action.to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(r.action_source as u8);
    out.extend_from_slice(&[r.s_g as u8, r.s_t as u8, r.grasp_failure.code(), r.task_failure.code(), r.no_candidates as u8]);
    out.extend_from_slice(&r.z.to_le_bytes());
    for q in r.crop64.iter().chain(&r.crop32) {
        out.extend_from_slice(&q.to_le_bytes());
    }
    out.extend_from_slice(&[0u8; 2]);
    debug_assert_eq!(out.len() - start, RECORD_SIZE);
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let v: [u8; N] = self.bytes[self.at..self.at + N].try_into().expect("fixed record layout");
        self.at += N;
        v
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
}

fn decode(bytes: &[u8], path: &Path, index: usize) -> Result<EpisodeRecord> {
    let bad = |what: &str| Error::format(path, format!("record {index}: invalid {what}"));
    let mut c = Cursor { bytes, at: 0 };
    let episode_index = c.u64();
    let round_index = u32::from_le_bytes(c.take());
    let raw_id: [u8; TOOL_ID_BYTES] = c.take();
    let end = raw_id.iter().position(|&b| b == 0).unwrap_or(TOOL_ID_BYTES);
    let tool_id = std::str::from_utf8(&raw_id[..end]).map_err(|_| bad("tool_id"))?.to_string();
    let task = TaskKind::from_code(c.u8()).ok_or_else(|| bad("task"))?;
    let seeds = EpisodeSeeds {
        scene: c.u64(),
        camera: c.u64(),
        noise: c.u64(),
        policy: c.u64(),
    };
    let g: [f64; 5] = std::array::from_fn(|_| c.f64());
    let mut grasp = GraspSpec::new(g[0], g[1], g[2], 0.0, g[4]);
    grasp.gphi = g[3];
    let grasp_source = match c.u8() {
        0 => GraspSource::Cem,
        1 => GraspSource::NmsDiverse,
        2 => GraspSource::Random,
        _ => return Err(bad("grasp_source")),
    };
    let action = ActionSpec::from_array(std::array::from_fn(|_| c.f64()));
    let action_source = match c.u8() {
        0 => ActionSource::Policy,
        1 => ActionSource::Random,
        _ => return Err(bad("action_source")),
    };
    let flag = |v: u8| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(bad("label")),
    };
    let s_g = flag(c.u8())?;
    let s_t = flag(c.u8())?;
    let grasp_failure = GraspFailure::from_code(c.u8()).ok_or_else(|| bad("grasp_failure"))?;
    let task_failure = TaskFailure::from_code(c.u8()).ok_or_else(|| bad("task_failure"))?;
    let no_candidates = flag(c.u8())?;
    let z = c.f64();
    let crop64 = (0..CROP_LARGE * CROP_LARGE).map(|_| c.u16()).collect();
    let crop32 = (0..CROP_SMALL * CROP_SMALL).map(|_| c.u16()).collect();
    if s_t && !s_g {
        return Err(Error::LabelEntailment { index });
    }
    Ok(EpisodeRecord {
        episode_index,
        round_index,
        tool_id,
        task,
        seeds,
        grasp,
        grasp_source,
        action,
        action_source,
        s_g,
        s_t,
        grasp_failure,
        task_failure,
        no_candidates,
        z,
        crop64,
        crop32,
    })
}

pub fn write_dataset(header: &DatasetHeader, records: &[EpisodeRecord], path: &Path) -> Result<()> {
    if header.record_count != records.len() {
        return Err(Error::config("record_count", format!("header says {}, have {}", header.record_count, records.len())));
    }
    if let Some(index) = records.iter().position(|r| r.s_t && !r.s_g) {
        return Err(Error::LabelEntailment { index });
    }
    let mut bytes = serde_json::to_vec(header).expect("serializable");
    bytes.push(b'\n');
    bytes.reserve(RECORD_SIZE * records.len());
    for r in records {
        encode(r, &mut bytes)?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_header(path: &Path) -> Result<(DatasetHeader, usize)> {
    use std::io::{BufRead, BufReader};
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = Vec::new();
    BufReader::new(f).read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format(path, "missing header line"));
    }
    let header: DatasetHeader = serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.format != MAGIC {
        return Err(Error::format(path, format!("not a dataset file ({})", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::HashMismatch {
            what: "dataset version".into(),
            expected: VERSION.to_string(),
            found: header.version.to_string(),
        });
    }
    if header.record_size != RECORD_SIZE {
        return Err(Error::format(path, format!("record size {} (expected {RECORD_SIZE})", header.record_size)));
    }
    Ok((header, line.len()))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<EpisodeRecord>)> {
    let (header, offset) = read_dataset_header(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let body = &bytes[offset..];
    let complete = body.len() / RECORD_SIZE;
    if complete < header.record_count || body.len() % RECORD_SIZE != 0 && complete >= header.record_count {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            last_valid: complete.min(header.record_count).checked_sub(1),
        });
    }
    if body.len() != header.record_count * RECORD_SIZE {
        return Err(Error::format(path, format!("{} bytes of records for {} declared", body.len(), header.record_count)));
    }
    let records = body
        .chunks_exact(RECORD_SIZE)
        .enumerate()
        .map(|(i, chunk)| decode(chunk, path, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// Reads a dataset and checks it was collected on `library_hash`.
pub fn read_dataset_for(path: &Path, library_hash: u64) -> Result<(DatasetHeader, Vec<EpisodeRecord>)> {
    let (h, r) = read_dataset(path)?;
    let want = format!("{library_hash:016x}");
    if h.library_hash != want {
        return Err(Error::HashMismatch {
            what: "library".into(),
            expected: want,
            found: h.library_hash,
        });
    }
    Ok((h, r))
}
