//! Candidate scoring, non-maximum suppression, cross-entropy-method
//! selection over the antipodal candidate set, and baseline selectors.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::depthcam::DepthObservation;
use crate::graspsim::{axis_angle_diff, normalize_axis, GraspSpec};
use crate::neural::net::{forward_heads, Heads, NetInput, TogNetParams};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub n_candidates: usize,
    pub cem_iterations: usize,
    pub cem_elite_fraction: f64,
    pub cem_components: usize,
    pub cem_resample: usize,
    pub em_steps: usize,
    pub nms_distance: f64,
    /// Metres per radian of axis difference in the NMS / projection metric.
    pub nms_angle_weight: f64,
    pub alpha: f64,
    pub delta: f64,
    pub diagnostic_filter: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_candidates: 200,
            cem_iterations: 3,
            cem_elite_fraction: 0.25,
            cem_components: 3,
            cem_resample: 50,
            em_steps: 10,
            nms_distance: 0.025,
            nms_angle_weight: 0.02,
            alpha: 0.5,
            delta: 0.5,
            diagnostic_filter: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cem_elite_fraction > 0.0 && self.cem_elite_fraction < 1.0) {
            return Err(Error::config("selection.cem_elite_fraction", "must be in (0, 1)"));
        }
        for (f, v) in [
            ("selection.n_candidates", self.n_candidates),
            ("selection.cem_iterations", self.cem_iterations),
            ("selection.cem_components", self.cem_components),
            ("selection.cem_resample", self.cem_resample),
            ("selection.em_steps", self.em_steps),
        ] {
            if v == 0 {
                return Err(Error::config(f, "must be >= 1"));
            }
        }
        if !(self.nms_distance >= 0.0 && self.nms_angle_weight >= 0.0) {
            return Err(Error::config("selection.nms_distance", "must be non-negative"));
        }
        for (f, v) in [("selection.alpha", self.alpha), ("selection.delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(f, "must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// A candidate with its network scores. Scores a selector did not need are NaN.
#[derive(Clone, Debug)]
pub struct ScoredGrasp {
    /// Position in the original candidate list.
    pub index: usize,
    pub grasp: GraspSpec,
    pub q_g: f64,
    pub q_tg: f64,
    pub q_t: f64,
    pub action_mean: [f64; 4],
    pub input: NetInput,
    /// Set by [`flag_task_oriented`].
    pub task_oriented: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    QG,
    QT,
}

impl Objective {
    pub fn score(self, s: &ScoredGrasp) -> f64 {
        match self {
            Objective::QG => s.q_g,
            Objective::QT => s.q_t,
        }
    }

    fn heads(self) -> Heads {
        match self {
            Objective::QG => Heads::GraspOnly,
            Objective::QT => Heads::All,
        }
    }
}

pub fn candidate_inputs(obs: &DepthObservation, candidates: &[GraspSpec]) -> Vec<NetInput> {
    candidates.iter().map(|g| NetInput::from_observation(obs, g)).collect()
}

fn unscored(obs: &DepthObservation, candidates: &[GraspSpec]) -> Vec<ScoredGrasp> {
    candidates
        .iter()
        .zip(candidate_inputs(obs, candidates))
        .enumerate()
        .map(|(index, (g, input))| ScoredGrasp {
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
}

/// Eval-mode scores for every candidate, in order. With [`Heads::GraspOnly`]
/// only `q_g` is filled in.
pub fn score_candidates_with(params: &TogNetParams, obs: &DepthObservation, candidates: &[GraspSpec], heads: Heads) -> Result<Vec<ScoredGrasp>> {
    if candidates.is_empty() {
        return Err(Error::Sampling {
            what: "grasp candidates".into(),
            attempts: 0,
        });
    }
    let mut scored = unscored(obs, candidates);
    let inputs: Vec<NetInput> = scored.iter().map(|s| s.input.clone()).collect();
    let outs = forward_heads(params, &inputs, heads)?;
    for (s, o) in scored.iter_mut().zip(outs) {
        s.q_g = o.q_g;
        if heads == Heads::All {
            s.q_tg = o.q_tg;
            s.q_t = o.q_t;
            s.action_mean = o.action_mean;
        }
    }
    Ok(scored)
}

pub fn score_candidates(params: &TogNetParams, obs: &DepthObservation, candidates: &[GraspSpec]) -> Result<Vec<ScoredGrasp>> {
    score_candidates_with(params, obs, candidates, Heads::All)
}

/// Marks grasps with `q_g ≥ alpha` and `q_tg ≥ delta`.
pub fn flag_task_oriented(scored: &mut [ScoredGrasp], config: &SelectionConfig) {
    for s in scored {
        s.task_oriented = config.diagnostic_filter && s.q_g >= config.alpha && s.q_tg >= config.delta;
    }
}

pub fn grasp_distance(a: &GraspSpec, b: &GraspSpec, angle_weight: f64) -> f64 {
    a.distance(b, angle_weight)
}

/// Greedy suppression in descending `q_g` order (ties by original index).
pub fn nms_filter(scored: &[ScoredGrasp], config: &SelectionConfig) -> Vec<ScoredGrasp> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].q_g.total_cmp(&scored[a].q_g).then(scored[a].index.cmp(&scored[b].index)));
    let mut kept: Vec<ScoredGrasp> = Vec::new();
    for i in order {
        let g = &scored[i].grasp;
        if kept.iter().all(|k| grasp_distance(&k.grasp, g, config.nms_angle_weight) > config.nms_distance) {
            kept.push(scored[i].clone());
        }
    }
    kept
}

/// Index of the best candidate; ties go to the lowest index.
pub fn exhaustive_scored(scored: &[ScoredGrasp], objective: Objective) -> usize {
    let mut best = 0;
    for (i, s) in scored.iter().enumerate().skip(1) {
        if objective.score(s) > objective.score(&scored[best]) {
            best = i;
        }
    }
    best
}

pub fn exhaustive_select(params: &TogNetParams, obs: &DepthObservation, candidates: &[GraspSpec], objective: Objective) -> Result<ScoredGrasp> {
    let scored = score_candidates_with(params, obs, candidates, objective.heads())?;
    let i = exhaustive_scored(&scored, objective);
    Ok(scored[i].clone())
}

const DIM: usize = 4;
const VAR_FLOOR: [f64; DIM] = [1e-6, 1e-6, 1e-3, 1e-6];

fn features(g: &GraspSpec) -> [f64; DIM] {
    [g.gx, g.gy, g.gphi, g.gz]
}

/// Diagonal Gaussian mixture over (x, y, phi, z).
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; DIM]>,
    pub vars: Vec<[f64; DIM]>,
}

fn sq_dist(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn log_normal_diag(x: &[f64; DIM], mean: &[f64; DIM], var: &[f64; DIM]) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    (0..DIM).map(|d| -0.5 * ((x[d] - mean[d]).powi(2) / var[d] + var[d].ln() + ln_2pi)).sum()
}

fn kmeans_pp(points: &[[f64; DIM]], k: usize, rng: &mut Rng) -> Vec<[f64; DIM]> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            centers.push(points[rng.random_range(0..points.len())]);
            continue;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        centers.push(points[pick]);
    }
    centers
}

/// Fixed-step EM from a k-means++ start.
pub fn fit_mixture(points: &[[f64; DIM]], k: usize, steps: usize, rng: &mut Rng) -> Mixture {
    let k = k.min(points.len()).max(1);
    let n = points.len();
    let mut global_var = [0.0; DIM];
    for (d, gv) in global_var.iter_mut().enumerate() {
        let m = points.iter().map(|p| p[d]).sum::<f64>() / n as f64;
        *gv = (points.iter().map(|p| (p[d] - m).powi(2)).sum::<f64>() / n as f64).max(VAR_FLOOR[d]);
    }
    let mut mix = Mixture {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(points, k, rng),
        vars: vec![global_var; k],
    };
    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..steps {
        for (p, r) in points.iter().zip(resp.iter_mut()) {
            let logs: Vec<f64> = (0..k).map(|j| mix.weights[j].max(1e-300).ln() + log_normal_diag(p, &mix.means[j], &mix.vars[j])).collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
            for (rj, l) in r.iter_mut().zip(&logs) {
                *rj = (l - top).exp() / sum;
            }
        }
        for j in 0..k {
            let nj: f64 = resp.iter().map(|r| r[j]).sum();
            if nj < 1e-9 {
                continue;
            }
            mix.weights[j] = nj / n as f64;
            let mut mean = [0.0; DIM];
            for (p, r) in points.iter().zip(&resp) {
                for d in 0..DIM {
                    mean[d] += r[j] * p[d];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nj);
            let mut var = [0.0; DIM];
            for (p, r) in points.iter().zip(&resp) {
                for d in 0..DIM {
                    var[d] += r[j] * (p[d] - mean[d]).powi(2);
                }
            }
            for d in 0..DIM {
                var[d] = (var[d] / nj).max(VAR_FLOOR[d]);
            }
            mix.means[j] = mean;
            mix.vars[j] = var;
        }
        let total: f64 = mix.weights.iter().sum();
        mix.weights.iter_mut().for_each(|w| *w /= total);
    }
    mix
}

impl Mixture {
    pub fn sample(&self, rng: &mut Rng) -> [f64; DIM] {
        use rand_distr::{Distribution, StandardNormal};
        let mut u = rng.random::<f64>();
        let mut j = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                j = i;
                break;
            }
            u -= w;
        }
        let mut x = [0.0; DIM];
        for (d, v) in x.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            *v = self.means[j][d] + self.vars[j][d].sqrt() * e;
        }
        x[2] = normalize_axis(x[2]);
        x
    }
}

fn nearest_candidate(x: &[f64; DIM], scored: &[ScoredGrasp], angle_weight: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, s) in scored.iter().enumerate() {
        let g = &s.grasp;
        let d = ((g.gx - x[0]).powi(2) + (g.gy - x[1]).powi(2)).sqrt() + angle_weight * axis_angle_diff(g.gphi, x[2]);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

#[derive(Clone, Debug)]
pub struct CemResult {
    pub best: ScoredGrasp,
    /// Best objective value in the pool after each iteration (index 0 = initial pool).
    pub best_per_iteration: Vec<f64>,
}

/// Cross-entropy method over a scored candidate set. Draws from the fitted
/// mixture are projected onto the nearest candidate, so every pool member is
/// an original candidate.
pub fn cem_select_scored(scored: &[ScoredGrasp], objective: Objective, config: &SelectionConfig, rng: &mut Rng) -> CemResult {
    assert!(!scored.is_empty(), "cem over an empty candidate set");
    let by_score = |pool: &mut Vec<usize>| {
        pool.sort_by(|&a, &b| objective.score(&scored[b]).total_cmp(&objective.score(&scored[a])).then(a.cmp(&b)));
    };
    let mut pool: Vec<usize> = (0..scored.len()).collect();
    by_score(&mut pool);
    let mut trace = vec![objective.score(&scored[pool[0]])];
    if scored.len() > 1 {
        for _ in 0..config.cem_iterations {
            let n_elite = ((pool.len() as f64 * config.cem_elite_fraction).ceil() as usize).clamp(1, pool.len());
            let elites: Vec<usize> = pool[..n_elite].to_vec();
            let points: Vec<[f64; DIM]> = elites.iter().map(|&i| features(&scored[i].grasp)).collect();
            let mix = fit_mixture(&points, config.cem_components, config.em_steps, rng);
            let mut next = elites.clone();
            for _ in 0..config.cem_resample {
                let x = mix.sample(rng);
                let j = nearest_candidate(&x, scored, config.nms_angle_weight);
                if !next.contains(&j) {
                    next.push(j);
                }
            }
            pool = next;
            by_score(&mut pool);
            trace.push(objective.score(&scored[pool[0]]));
        }
    }
    CemResult {
        best: scored[pool[0]].clone(),
        best_per_iteration: trace,
    }
}

pub fn cem_select(
    params: &TogNetParams,
    obs: &DepthObservation,
    candidates: &[GraspSpec],
    objective: Objective,
    config: &SelectionConfig,
    rng: &mut Rng,
) -> Result<CemResult> {
    let scored = score_candidates_with(params, obs, candidates, objective.heads())?;
    Ok(cem_select_scored(&scored, objective, config, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    AntipodalRandom,
    TaskAgnostic,
    NmsDiverse,
}

/// Uniform choice over the NMS survivors of a scored set.
pub fn nms_diverse_scored(scored: &[ScoredGrasp], config: &SelectionConfig, rng: &mut Rng) -> ScoredGrasp {
    let survivors = nms_filter(scored, config);
    survivors[rng.random_range(0..survivors.len())].clone()
}

pub fn baseline_grasp(
    kind: BaselineKind,
    params: Option<&TogNetParams>,
    obs: &DepthObservation,
    candidates: &[GraspSpec],
    config: &SelectionConfig,
    rng: &mut Rng,
) -> Result<ScoredGrasp> {
    if candidates.is_empty() {
        return Err(Error::Sampling {
            what: "grasp candidates".into(),
            attempts: 0,
        });
    }
    let need = || {
        params.ok_or_else(|| Error::MissingPrerequisite {
            stage: format!("{kind:?}"),
            detail: "network parameters required".into(),
        })
    };
    match kind {
        BaselineKind::AntipodalRandom => {
            let i = rng.random_range(0..candidates.len());
            let mut s = unscored(obs, &candidates[i..=i]).pop().expect("one candidate");
            s.index = i;
            Ok(s)
        }
        BaselineKind::TaskAgnostic => Ok(cem_select(need()?, obs, candidates, Objective::QG, config, rng)?.best),
        BaselineKind::NmsDiverse => {
            let scored = score_candidates_with(need()?, obs, candidates, Heads::GraspOnly)?;
            Ok(nms_diverse_scored(&scored, config, rng))
        }
    }
}
