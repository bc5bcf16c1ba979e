//! Paired method-vs-baseline evaluation, success tables and the grasp audit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::depthcam::{draw_segment, quantize_depth, write_pgm_u16, DepthObservation};
use crate::graspselect::{cem_select_scored, exhaustive_scored, score_candidates_with, Objective, ScoredGrasp, SelectionConfig};
use crate::graspsim::{GraspFailure, GraspSpec};
use crate::neural::net::{forward, Heads, TogNetParams};
use crate::procgen::{Family, ToolLibrary, ToolShape};
use crate::rng::{rng_from, tag};
use crate::selfsup::pick_tool;
use crate::tasksim::{execute_episode, prepare_episode, random_action, ActionSpec, EpisodeSeeds, PreparedEpisode, SimConfig, TaskFailure, TaskKind};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Uniform antipodal candidate, random action.
    AntipodalRandom,
    /// CEM on q_g, random action.
    TaskAgnRandom,
    /// CEM on q_g, policy mean action.
    TaskAgnTrained,
    /// CEM on q_t, random action.
    TaskOriRandom,
    /// CEM on q_t, policy mean action.
    Ours,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::AntipodalRandom,
        Method::TaskAgnRandom,
        Method::TaskAgnTrained,
        Method::TaskOriRandom,
        Method::Ours,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::AntipodalRandom => "antipodal_random",
            Method::TaskAgnRandom => "task_agn_random",
            Method::TaskAgnTrained => "task_agn_trained",
            Method::TaskOriRandom => "task_ori_random",
            Method::Ours => "ours",
        }
    }

    fn objective(self) -> Option<Objective> {
        match self {
            Method::AntipodalRandom => None,
            Method::TaskAgnRandom | Method::TaskAgnTrained => Some(Objective::QG),
            Method::TaskOriRandom | Method::Ours => Some(Objective::QT),
        }
    }

    fn policy_action(self) -> bool {
        matches!(self, Method::TaskAgnTrained | Method::Ours)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub task: TaskKind,
    pub methods: Vec<Method>,
    pub episodes_per_method: usize,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            task: TaskKind::Hammer,
            methods: Method::ALL.to_vec(),
            episodes_per_method: 500,
            seed: 0,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("eval.methods", "must list at least one method"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::config("eval.methods", "duplicate method"));
        }
        if self.episodes_per_method == 0 {
            return Err(Error::config("eval.episodes_per_method", "must be >= 1"));
        }
        Ok(())
    }
}

/// Refuses a held-out library that shares a tool id with the training one.
pub fn check_heldout(train: &ToolLibrary, heldout: &ToolLibrary) -> Result<()> {
    let ids: std::collections::HashSet<&str> = train.tools.iter().map(|t| t.id.as_str()).collect();
    match heldout.tools.iter().find(|t| ids.contains(t.id.as_str())) {
        Some(t) => Err(Error::config("eval.heldout", format!("tool {} is also in the training library", t.id))),
        None if heldout.is_empty() => Err(Error::config("eval.heldout", "library is empty")),
        None => Ok(()),
    }
}

pub fn eval_seeds(spec: &EvalSpec, episode: u64) -> EpisodeSeeds {
    EpisodeSeeds::derive(&[spec.seed, tag("eval"), spec.task.code() as u64, episode])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: u64,
    pub method: Method,
    pub tool_id: String,
    pub family: Family,
    pub grasp: GraspSpec,
    pub action: ActionSpec,
    pub s_g: bool,
    pub s_t: bool,
    pub grasp_failure: GraspFailure,
    pub task_failure: TaskFailure,
    pub no_candidates: bool,
    /// Distance from the commanded grasp center to the tool's center of mass.
    pub com_distance: f64,
}

fn com_distance(tool: &ToolShape, prep: &PreparedEpisode, grasp: &GraspSpec) -> f64 {
    prep.tool_pose.apply(tool.mass_properties().com).distance(grasp.center())
}

fn select(method: Method, seeds: &EpisodeSeeds, scored: &[ScoredGrasp], cfg: &SelectionConfig) -> ScoredGrasp {
    use rand::Rng as _;
    // every method draws from the same stream, so methods sharing an objective
    // pick the same grasp
    let mut rng = rng_from(&[seeds.policy, tag("select")]);
    match method.objective() {
        None => scored[rng.random_range(0..scored.len())].clone(),
        Some(obj) => cem_select_scored(scored, obj, cfg, &mut rng).best,
    }
}

/// Runs every method of `spec` on one episode; outcomes follow `spec.methods`.
pub fn eval_episode(spec: &EvalSpec, params: &TogNetParams, heldout: &ToolLibrary, sim: &SimConfig, selection: &SelectionConfig, episode: u64) -> Result<Vec<EpisodeOutcome>> {
    let seeds = eval_seeds(spec, episode);
    let tool = pick_tool(heldout, &seeds);
    let prep = prepare_episode(tool, spec.task, &seeds, sim)?;
    let outcome = |method, grasp: GraspSpec, action, exec: Option<crate::tasksim::ExecutedEpisode>| {
        let com = com_distance(tool, &prep, &grasp);
        let (s_g, s_t, gf, tf) = match &exec {
            Some(e) => (e.s_g(), e.s_t(), e.grasp.failure_reason, e.task.failure_reason),
            None => (false, false, GraspFailure::NoContact, TaskFailure::GraspFailed),
        };
        EpisodeOutcome {
            episode,
            method,
            tool_id: tool.id.clone(),
            family: tool.family,
            grasp,
            action,
            s_g,
            s_t,
            grasp_failure: gf,
            task_failure: tf,
            no_candidates: exec.is_none(),
            com_distance: com,
        }
    };
    if prep.candidates.is_empty() {
        let c = prep.tool_pose.translation();
        return Ok(spec
            .methods
            .iter()
            .map(|&m| outcome(m, GraspSpec::new(c.x, c.y, 0.0, 0.0, 0.0), ActionSpec::default(), None))
            .collect());
    }
    let needs_net = spec.methods.iter().any(|m| m.objective().is_some());
    let scored = if needs_net {
        score_candidates_with(params, &prep.obs, &prep.candidates, Heads::All)?
    } else {
        crate::graspselect::candidate_inputs(&prep.obs, &prep.candidates)
            .into_iter()
            .zip(&prep.candidates)
            .enumerate()
            .map(|(index, (input, g))| ScoredGrasp {
                index,
                grasp: g.clone(),
                q_g: f64::NAN,
                q_tg: f64::NAN,
                q_t: f64::NAN,
                action_mean: [f64::NAN; 4],
                input,
                task_oriented: false,
            })
            .collect()
    };
    let random = random_action(&mut rng_from(&[seeds.policy, tag("random_action")]));
    let mut out = Vec::with_capacity(spec.methods.len());
    for &m in &spec.methods {
        let chosen = select(m, &seeds, &scored, selection);
        let action = if m.policy_action() {
            let mean = if chosen.action_mean.iter().all(|v| v.is_finite()) {
                chosen.action_mean
            } else {
                forward(params, std::slice::from_ref(&chosen.input))?[0].action_mean
            };
            ActionSpec::from_array(mean)
        } else {
            random
        };
        let exec = execute_episode(tool, &prep, &chosen.grasp, || action, &seeds, sim);
        out.push(outcome(m, chosen.grasp, action.clamped(), Some(exec)));
    }
    Ok(out)
}

/// JSON writes non-finite floats as `null`; read them back as NaN.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub episodes: usize,
    pub successes: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub rate: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub ci_low: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub ci_high: f64,
}

/// Wilson score interval at the given two-sided confidence level.
pub fn wilson_interval(successes: usize, n: usize, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

impl RateRow {
    pub fn new(successes: usize, episodes: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, episodes, 0.95);
        RateRow {
            episodes,
            successes,
            rate: if episodes > 0 { successes as f64 / episodes as f64 } else { f64::NAN },
            ci_low,
            ci_high,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub count: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub median: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub std: f64,
}

impl DistanceStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return DistanceStats {
                count: 0,
                mean: f64::NAN,
                median: f64::NAN,
                std: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        DistanceStats {
            count: n,
            mean,
            median,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub overall: RateRow,
    pub families: BTreeMap<Family, RateRow>,
    pub grasp_rate: f64,
    pub task_failures: BTreeMap<String, usize>,
    pub grasp_failures: BTreeMap<String, usize>,
    pub com_distance: DistanceStats,
}

/// Exact two-sided McNemar test on discordant pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub a: Method,
    pub b: Method,
    /// Episodes where only `a` succeeded.
    pub a_only: usize,
    pub b_only: usize,
    pub rate_difference: f64,
    pub p_value: f64,
}

pub fn mcnemar_exact(a_only: usize, b_only: usize) -> f64 {
    let n = a_only + b_only;
    if n == 0 {
        return 1.0;
    }
    let k = a_only.min(b_only) as u64;
    let bin = Binomial::new(0.5, n as u64).expect("valid binomial");
    (2.0 * bin.cdf(k)).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub episodes_per_method: usize,
    pub methods: Vec<MethodSummary>,
    /// `ours` against every other evaluated method.
    pub paired: Vec<PairedTest>,
    pub outcomes: Vec<EpisodeOutcome>,
}

impl EvalReport {
    pub fn summary(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn paired_test(&self, a: Method, b: Method) -> Option<&PairedTest> {
        self.paired.iter().find(|p| p.a == a && p.b == b)
    }

    pub fn outcomes_of(&self, m: Method) -> impl Iterator<Item = &EpisodeOutcome> {
        self.outcomes.iter().filter(move |o| o.method == m)
    }
}

pub fn paired_test(outcomes: &[EpisodeOutcome], a: Method, b: Method) -> PairedTest {
    let sa: BTreeMap<u64, bool> = outcomes.iter().filter(|o| o.method == a).map(|o| (o.episode, o.s_t)).collect();
    let sb: BTreeMap<u64, bool> = outcomes.iter().filter(|o| o.method == b).map(|o| (o.episode, o.s_t)).collect();
    let (mut a_only, mut b_only) = (0, 0);
    for (e, &x) in &sa {
        if let Some(&y) = sb.get(e) {
            a_only += (x && !y) as usize;
            b_only += (y && !x) as usize;
        }
    }
    let n = sa.len().max(1) as f64;
    PairedTest {
        a,
        b,
        a_only,
        b_only,
        rate_difference: (a_only as f64 - b_only as f64) / n,
        p_value: mcnemar_exact(a_only, b_only),
    }
}

pub fn summarize(spec: &EvalSpec, outcomes: Vec<EpisodeOutcome>) -> EvalReport {
    let methods = spec
        .methods
        .iter()
        .map(|&m| {
            let mine: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.method == m).collect();
            let families = Family::ALL
                .iter()
                .map(|&f| {
                    let fam: Vec<_> = mine.iter().filter(|o| o.family == f).collect();
                    (f, RateRow::new(fam.iter().filter(|o| o.s_t).count(), fam.len()))
                })
                .collect();
            let mut task_failures = BTreeMap::new();
            let mut grasp_failures = BTreeMap::new();
            for o in &mine {
                *task_failures.entry(o.task_failure.as_str().to_string()).or_insert(0) += 1;
                *grasp_failures.entry(o.grasp_failure.as_str().to_string()).or_insert(0) += 1;
            }
            let com: Vec<f64> = mine.iter().filter(|o| !o.no_candidates).map(|o| o.com_distance).collect();
            MethodSummary {
                method: m,
                overall: RateRow::new(mine.iter().filter(|o| o.s_t).count(), mine.len()),
                families,
                grasp_rate: mine.iter().filter(|o| o.s_g).count() as f64 / mine.len().max(1) as f64,
                task_failures,
                grasp_failures,
                com_distance: DistanceStats::of(&com),
            }
        })
        .collect();
    let paired = if spec.methods.contains(&Method::Ours) {
        spec.methods
            .iter()
            .filter(|&&m| m != Method::Ours)
            .map(|&m| paired_test(&outcomes, Method::Ours, m))
            .collect()
    } else {
        Vec::new()
    };
    EvalReport {
        task: spec.task,
        episodes_per_method: spec.episodes_per_method,
        methods,
        paired,
        outcomes,
    }
}

/// Paired evaluation over `spec.episodes_per_method` held-out episodes.
pub fn run_eval(spec: &EvalSpec, params: &TogNetParams, heldout: &ToolLibrary, sim: &SimConfig, selection: &SelectionConfig) -> Result<EvalReport> {
    use rayon::prelude::*;
    spec.validate()?;
    if heldout.is_empty() {
        return Err(Error::config("eval.heldout", "library is empty"));
    }
    let per_episode = (0..spec.episodes_per_method as u64)
        .into_par_iter()
        .map(|i| eval_episode(spec, params, heldout, sim, selection, i))
        .collect::<Result<Vec<_>>>()?;
    let mut outcomes: Vec<EpisodeOutcome> = per_episode.into_iter().flatten().collect();
    outcomes.sort_by_key(|o| (spec.methods.iter().position(|&m| m == o.method), o.episode));
    Ok(summarize(spec, outcomes))
}

pub const CSV_HEADER: &str = "method,task,family,episodes,successes,rate,ci_low,ci_high";

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    let mut row = |m: Method, fam: &str, r: &RateRow| {
        writeln!(s, "{},{},{},{},{},{:.6},{:.6},{:.6}", m, report.task, fam, r.episodes, r.successes, r.rate, r.ci_low, r.ci_high).expect("string write");
    };
    for ms in &report.methods {
        for (f, r) in &ms.families {
            row(ms.method, f.as_str(), r);
        }
        row(ms.method, "all", &ms.overall);
    }
    s
}

/// Writes `<stem>.csv` and the full `<stem>.json` report.
pub fn write_report(report: &EvalReport, csv_path: &Path) -> Result<()> {
    std::fs::write(csv_path, report_csv(report)).map_err(|e| Error::io(csv_path, e))?;
    let json_path = csv_path.with_extension("json");
    let json = serde_json::to_vec_pretty(report).expect("serializable report");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

/// Depth image with grasp overlays: each grasp axis spans its opening width,
/// with short ticks at the jaws. Overlay pixels are written as `mark`.
pub fn grasp_overlay(obs: &DepthObservation, grasps: &[GraspSpec], half_width: f64, mark: u16) -> Vec<u16> {
    let n = obs.size();
    let mut img: Vec<u16> = obs.pixels.iter().map(|&d| quantize_depth(d)).collect();
    for g in grasps {
        let c = g.center();
        let axis = g.axis();
        let side = axis.perp() * 0.006;
        let a = c - axis * half_width;
        let b = c + axis * half_width;
        draw_segment(&mut img, n, obs.world_to_pixel(a), obs.world_to_pixel(b), mark);
        for jaw in [a, b] {
            draw_segment(&mut img, n, obs.world_to_pixel(jaw - side), obs.world_to_pixel(jaw + side), mark);
        }
    }
    img
}

pub fn write_overlay(obs: &DepthObservation, grasps: &[GraspSpec], half_width: f64, path: &Path) -> Result<()> {
    let img = grasp_overlay(obs, grasps, half_width, u16::MAX);
    write_pgm_u16(path, obs.size(), obs.size(), &img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub tool_id: String,
    pub family: Family,
    pub agnostic: GraspSpec,
    pub oriented: GraspSpec,
    pub agnostic_com: f64,
    pub oriented_com: f64,
    /// Distances to the centroid of the heavier part.
    pub agnostic_bulky: f64,
    pub oriented_bulky: f64,
}

/// For each tool, the exhaustive best grasp under q_g and under q_t on one
/// seeded drop, with distances to the COM and to the bulky part.
pub fn qualitative_grasp_audit(params: &TogNetParams, tools: &[&ToolShape], task: TaskKind, sim: &SimConfig, seed: u64) -> Result<Vec<AuditRow>> {
    use rayon::prelude::*;
    tools
        .par_iter()
        .enumerate()
        .filter_map(|(i, tool)| {
            let seeds = EpisodeSeeds::derive(&[seed, tag("audit"), i as u64]);
            let prep = match prepare_episode(tool, task, &seeds, sim) {
                Ok(p) => p,
                Err(e) => return Some(Err(e)),
            };
            if prep.candidates.is_empty() {
                return None;
            }
            let scored = match score_candidates_with(params, &prep.obs, &prep.candidates, Heads::All) {
                Ok(s) => s,
                Err(e) => return Some(Err(e)),
            };
            let agn = &scored[exhaustive_scored(&scored, Objective::QG)].grasp;
            let ori = &scored[exhaustive_scored(&scored, Objective::QT)].grasp;
            let com = prep.tool_pose.apply(tool.mass_properties().com);
            let bulky = prep.tool_pose.apply(tool.shape.parts()[tool.bulky_part()].centroid());
            Some(Ok(AuditRow {
                tool_id: tool.id.clone(),
                family: tool.family,
                agnostic_com: agn.center().distance(com),
                oriented_com: ori.center().distance(com),
                agnostic_bulky: agn.center().distance(bulky),
                oriented_bulky: ori.center().distance(bulky),
                agnostic: agn.clone(),
                oriented: ori.clone(),
            }))
        })
        .collect()
}

/// Fraction of audited tools whose task-oriented grasp is farther from
/// (`farther = true`) or nearer to the bulky part than the task-agnostic one.
pub fn audit_fraction(rows: &[AuditRow], farther: bool) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let hits = rows
        .iter()
        .filter(|r| if farther { r.oriented_bulky > r.agnostic_bulky } else { r.oriented_bulky < r.agnostic_bulky })
        .count();
    hits as f64 / rows.len() as f64
}
