//! Stage-0 grasp pretraining and per-round joint training.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::neural::loss::{backward, bce_logit, joint_loss, Labels, LossConfig};
use crate::neural::net::{forward_heads, forward_tape, Heads, Mode, NetInput, Theta, TogNetParams, TrunkPath, BN_MOMENTUM};
use crate::neural::tensor::Scalar;
use crate::rng::{rng_from, tag};
use crate::selfsup::EpisodeRecord;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// 64-bit forward and backward.
    #[default]
    F64,
    /// 32-bit forward and backward; parameters and optimizer state stay 64-bit.
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Grasp stream only, on stage-0 labels.
    Stage0,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Force half of every batch to be grasp successes when both classes exist.
    pub balance_grasp: bool,
    /// Train on every round so far rather than the newest alone.
    pub union_rounds: bool,
    /// Copies of the newest round in the union.
    pub newest_round_weight: usize,
    pub precision: Precision,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 10,
            balance_grasp: true,
            union_rounds: true,
            newest_round_weight: 2,
            precision: Precision::F64,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        for (f, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(f, "must be in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        if self.newest_round_weight == 0 {
            return Err(Error::config("train.newest_round_weight", "must be >= 1"));
        }
        if self.loss.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("train.loss.sigma", "must be positive"));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer over a subset of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &TogNetParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.values().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut TogNetParams, grads: &[Vec<f64>], indices: &[usize], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let values = params.values_mut();
        for &i in indices {
            let (m, v, p) = (&mut self.m[i], &mut self.v[i], &mut values[i]);
            for (k, &g) in grads[i].iter().enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_g: f64,
    pub loss_tg: f64,
    pub loss_pi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<EpochLoss>,
    pub steps: u64,
    pub examples: usize,
}

/// Training examples: records minus those never executed.
pub fn training_set<'a>(rounds: &[&'a [EpisodeRecord]], cfg: &TrainConfig) -> Vec<&'a EpisodeRecord> {
    let Some((newest, older)) = rounds.split_last() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    if cfg.union_rounds {
        for r in older {
            out.extend(r.iter().filter(|e| !e.no_candidates));
        }
    }
    let copies = if cfg.union_rounds && !older.is_empty() { cfg.newest_round_weight } else { 1 };
    for _ in 0..copies {
        out.extend(newest.iter().filter(|e| !e.no_candidates));
    }
    out
}

/// Mini-batches of one epoch as indices into the training set. With
/// balancing, every batch takes half its samples from the grasp successes and
/// half from the failures, cycling through each shuffled class.
pub fn epoch_batches(labels: &[bool], cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let n = labels.len();
    let mut rng = rng_from(&[cfg.seed, tag("epoch"), epoch as u64]);
    let bs = cfg.batch_size;
    let n_batches = n.div_ceil(bs);
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    if !cfg.balance_grasp || pos.is_empty() || neg.is_empty() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        return order.chunks(bs).map(|c| c.to_vec()).collect();
    }
    let mut pools = [pos, neg];
    let mut cursors = [0usize; 2];
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let size = bs.min(n - b * bs).max(1);
        let want_pos = size / 2 + (size % 2) * (b % 2);
        let mut batch = Vec::with_capacity(size);
        for (c, count) in [want_pos, size - want_pos].into_iter().enumerate() {
            for _ in 0..count {
                if cursors[c] == pools[c].len() {
                    pools[c].shuffle(&mut rng);
                    cursors[c] = 0;
                }
                batch.push(pools[c][cursors[c]]);
                cursors[c] += 1;
            }
        }
        batches.push(batch);
    }
    batches
}

fn batch_data(examples: &[&EpisodeRecord], idx: &[usize], background: f64) -> (Vec<NetInput>, Vec<Labels>) {
    use rayon::prelude::*;
    let inputs = idx.par_iter().map(|&i| examples[i].net_input(background)).collect();
    let labels = idx.iter().map(|&i| examples[i].labels()).collect();
    (inputs, labels)
}

/// One optimizer step in precision `T`; returns the batch loss terms.
#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar>(
    params: &mut TogNetParams,
    adam: &mut Adam,
    inputs: &[NetInput],
    labels: &[Labels],
    heads: Heads,
    indices: &[usize],
    cfg: &TrainConfig,
    batch_index: usize,
) -> Result<[f64; 3]> {
    let fwd = forward_tape::<T>(params, inputs, Mode::Train, heads)?;
    let loss = joint_loss(&fwd, labels, &cfg.loss)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite {
            batch: batch_index,
            detail: format!("loss {loss:?}"),
        });
    }
    let grads = backward(&fwd, labels, &cfg.loss, params)?;
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            batch: batch_index,
            detail: "gradient".into(),
        });
    }
    adam.step(params, &grads.values, indices, cfg);
    params.update_running(TrunkPath::Small, &fwd.stats[TrunkPath::Small as usize], BN_MOMENTUM);
    if heads == Heads::All {
        params.update_running(TrunkPath::Large, &fwd.stats[TrunkPath::Large as usize], BN_MOMENTUM);
    }
    if !params.all_finite() {
        return Err(Error::NonFinite {
            batch: batch_index,
            detail: "parameters after update".into(),
        });
    }
    Ok([loss.grasp, loss.task, loss.policy])
}

/// Trains `params` in place. `rounds` lists datasets oldest first; stage 0
/// updates the grasp group only and never runs the large-crop streams.
pub fn train(params: &mut TogNetParams, rounds: &[&[EpisodeRecord]], background: f64, cfg: &TrainConfig, stage: Stage) -> Result<TrainReport> {
    cfg.validate()?;
    let examples = training_set(rounds, cfg);
    if examples.is_empty() {
        return Err(Error::MissingPrerequisite {
            stage: "train".into(),
            detail: "no training examples".into(),
        });
    }
    let (heads, groups): (Heads, &[Theta]) = match stage {
        Stage::Stage0 => (Heads::GraspOnly, &[Theta::Grasp]),
        Stage::Joint => (Heads::All, &Theta::ALL),
    };
    let indices: Vec<usize> = groups.iter().flat_map(|&g| params.params_in(g).collect::<Vec<_>>()).collect();
    let labels: Vec<bool> = examples.iter().map(|e| e.s_g).collect();
    let mut adam = Adam::new(params);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch_index = 0;
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 3];
        let batches = epoch_batches(&labels, cfg, epoch);
        for idx in &batches {
            let (inputs, labels) = batch_data(&examples, idx, background);
            let parts = match cfg.precision {
                Precision::F64 => train_step::<f64>(params, &mut adam, &inputs, &labels, heads, &indices, cfg, batch_index)?,
                Precision::F32 => train_step::<f32>(params, &mut adam, &inputs, &labels, heads, &indices, cfg, batch_index)?,
            };
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            batch_index += 1;
        }
        let nb = batches.len() as f64;
        trace.push(EpochLoss {
            epoch,
            loss_g: sums[0] / nb,
            loss_tg: sums[1] / nb,
            loss_pi: sums[2] / nb,
        });
    }
    Ok(TrainReport {
        trace,
        steps: adam.steps(),
        examples: examples.len(),
    })
}

pub fn trace_csv(trace: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss_g,loss_tg,loss_pi\n");
    for e in trace {
        writeln!(s, "{},{:.9},{:.9},{:.9}", e.epoch, e.loss_g, e.loss_tg, e.loss_pi).expect("string write");
    }
    s
}

pub fn write_trace_csv(trace: &[EpochLoss], path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(trace)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_predicted: f64,
    /// NaN for empty bins.
    pub empirical: f64,
}

/// Equal-width probability bins over `[0, 1]`.
pub fn calibration_bins(pred: &[f64], truth: &[bool], bins: usize) -> Vec<CalibrationBin> {
    let mut count = vec![0usize; bins];
    let mut p_sum = vec![0.0; bins];
    let mut y_sum = vec![0.0; bins];
    for (&p, &y) in pred.iter().zip(truth) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        p_sum[b] += p;
        y_sum[b] += y as u8 as f64;
    }
    (0..bins)
        .map(|b| CalibrationBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count: count[b],
            mean_predicted: if count[b] > 0 { p_sum[b] / count[b] as f64 } else { f64::NAN },
            empirical: if count[b] > 0 { y_sum[b] / count[b] as f64 } else { f64::NAN },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub examples: usize,
    /// Mean grasp cross-entropy over all examples.
    pub loss_g: f64,
    /// Mean task cross-entropy over grasp successes (NaN if none).
    pub loss_tg: f64,
    /// Mean policy term over the policy mask (NaN if empty).
    pub loss_pi: f64,
    pub accuracy_g: f64,
    /// Accuracy of `q_tg` on grasp successes (NaN if none).
    pub accuracy_tg: f64,
    pub calibration_g: Vec<CalibrationBin>,
    pub calibration_tg: Vec<CalibrationBin>,
}

pub const CALIBRATION_BINS: usize = 10;

/// Eval-mode losses and classification metrics; `params` is not modified.
pub fn evaluate_losses(params: &TogNetParams, records: &[EpisodeRecord], background: f64, loss: &LossConfig, heads: Heads) -> Result<LossReport> {
    use rayon::prelude::*;
    let records: Vec<&EpisodeRecord> = records.iter().filter(|r| !r.no_candidates).collect();
    if records.is_empty() {
        return Err(Error::MissingPrerequisite {
            stage: "evaluate_losses".into(),
            detail: "empty dataset".into(),
        });
    }
    let inputs: Vec<NetInput> = records.par_iter().map(|r| r.net_input(background)).collect();
    let out = forward_heads(params, &inputs, heads)?;
    let n = records.len();
    let (mut lg, mut ltg, mut lpi) = (0.0, 0.0, 0.0);
    let (mut ng, mut npi, mut acc_g, mut acc_tg) = (0usize, 0usize, 0usize, 0usize);
    let (mut pg, mut yg, mut ptg, mut ytg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (o, r) in out.iter().zip(&records) {
        lg += bce_logit(o.logit_g, r.s_g);
        acc_g += ((o.q_g >= 0.5) == r.s_g) as usize;
        pg.push(o.q_g);
        yg.push(r.s_g);
        if heads == Heads::GraspOnly {
            continue;
        }
        if r.s_g {
            ng += 1;
            ltg += bce_logit(o.logit_tg, r.s_t);
            acc_tg += ((o.q_tg >= 0.5) == r.s_t) as usize;
            ptg.push(o.q_tg);
            ytg.push(r.s_t);
        }
        let masked = match loss.policy_mask {
            crate::neural::loss::PolicyMask::TaskSuccess => r.s_t,
            crate::neural::loss::PolicyMask::GraspSuccess => r.s_g,
        };
        if masked {
            npi += 1;
            let a = r.action.to_array();
            lpi += (0..4).map(|k| (o.action_mean[k] - a[k]).powi(2) / (2.0 * loss.sigma[k].powi(2))).sum::<f64>();
        }
    }
    let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { f64::NAN };
    Ok(LossReport {
        examples: n,
        loss_g: lg / n as f64,
        loss_tg: mean(ltg, ng),
        loss_pi: mean(lpi, npi),
        accuracy_g: acc_g as f64 / n as f64,
        accuracy_tg: mean(acc_tg as f64, ng),
        calibration_g: calibration_bins(&pg, &yg, CALIBRATION_BINS),
        calibration_tg: calibration_bins(&ptg, &ytg, CALIBRATION_BINS),
    })
}
