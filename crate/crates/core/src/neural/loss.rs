//! Joint grasp / task / action loss and its gradients.

use serde::{Deserialize, Serialize};

use super::net::{Forward, TogNetParams};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Labels {
    pub s_g: bool,
    pub s_t: bool,
    pub action: [f64; 4],
}

/// Which label gates the action-regression term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMask {
    /// Task success.
    #[default]
    TaskSuccess,
    /// Grasp success (ablation).
    GraspSuccess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Per-dimension standard deviation of the action distribution.
    pub sigma: [f64; 4],
    pub policy_mask: PolicyMask,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            sigma: super::policy::PolicyConfig::default().sigma,
            policy_mask: PolicyMask::TaskSuccess,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub grasp: f64,
    pub task: f64,
    pub policy: f64,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logit against a label.
pub fn bce_logit(logit: f64, y: bool) -> f64 {
    if y {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub fn check_labels(labels: &[Labels]) -> Result<()> {
    match labels.iter().position(|l| l.s_t && !l.s_g) {
        Some(index) => Err(Error::LabelEntailment { index }),
        None => Ok(()),
    }
}

impl LossConfig {
    fn policy_weight(&self, l: &Labels) -> f64 {
        let on = match self.policy_mask {
            PolicyMask::TaskSuccess => l.s_t,
            PolicyMask::GraspSuccess => l.s_g,
        };
        if on {
            1.0
        } else {
            0.0
        }
    }
}

/// Batch-mean loss from logits and action means. `logit_tg` / `action` may be
/// absent for grasp-only forwards, in which case those terms are 0.
pub fn joint_loss_parts(
    logit_g: &[f64],
    logit_tg: Option<&[f64]>,
    action: Option<&[[f64; 4]]>,
    labels: &[Labels],
    config: &LossConfig,
) -> Result<LossValue> {
    check_labels(labels)?;
    let n = labels.len() as f64;
    let mut v = LossValue::default();
    for (i, l) in labels.iter().enumerate() {
        v.grasp += bce_logit(logit_g[i], l.s_g);
        if let Some(tg) = logit_tg {
            if l.s_g {
                v.task += bce_logit(tg[i], l.s_t);
            }
        }
        if let Some(a) = action {
            let w = config.policy_weight(l);
            if w > 0.0 {
                v.policy += (0..4).map(|k| (a[i][k] - l.action[k]).powi(2) / (2.0 * config.sigma[k].powi(2))).sum::<f64>();
            }
        }
    }
    v.grasp /= n;
    v.task /= n;
    v.policy /= n;
    v.total = v.grasp + v.task + v.policy;
    Ok(v)
}

pub fn joint_loss<T: Scalar>(forward: &Forward<T>, labels: &[Labels], config: &LossConfig) -> Result<LossValue> {
    let outs = forward.outputs();
    if outs.len() != labels.len() {
        return Err(Error::Shape {
            layer: "loss".into(),
            detail: format!("{} outputs, {} labels", outs.len(), labels.len()),
        });
    }
    let g: Vec<f64> = outs.iter().map(|o| o.logit_g).collect();
    let tg: Vec<f64> = outs.iter().map(|o| o.logit_tg).collect();
    let a: Vec<[f64; 4]> = outs.iter().map(|o| o.action_mean).collect();
    joint_loss_parts(
        &g,
        forward.logit_tg.map(|_| tg.as_slice()),
        forward.action.map(|_| a.as_slice()),
        labels,
        config,
    )
}

/// Gradient of the joint loss with respect to every parameter tensor, aligned
/// with [`TogNetParams::values`]. Parameters the loss does not reach get zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &TogNetParams) -> Self {
        Gradients {
            values: params.values().iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self, indices: impl Iterator<Item = usize>) -> f64 {
        indices.flat_map(|i| self.values[i].iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn backward<T: Scalar>(forward: &Forward<T>, labels: &[Labels], config: &LossConfig, params: &TogNetParams) -> Result<Gradients> {
    check_labels(labels)?;
    let n = forward.batch;
    if labels.len() != n {
        return Err(Error::Shape {
            layer: "loss".into(),
            detail: format!("{n} outputs, {} labels", labels.len()),
        });
    }
    let inv_n = 1.0 / n as f64;
    let outs = forward.outputs();
    let mut seeds = Vec::new();
    let dg: Vec<f64> = outs
        .iter()
        .zip(labels)
        .map(|(o, l)| (o.q_g - if l.s_g { 1.0 } else { 0.0 }) * inv_n)
        .collect();
    seeds.push((forward.logit_g, Tensor::from_f64(&[n, 1], &dg)));
    if let Some(v) = forward.logit_tg {
        let d: Vec<f64> = outs
            .iter()
            .zip(labels)
            .map(|(o, l)| if l.s_g { (o.q_tg - if l.s_t { 1.0 } else { 0.0 }) * inv_n } else { 0.0 })
            .collect();
        seeds.push((v, Tensor::from_f64(&[n, 1], &d)));
    }
    if let Some(v) = forward.action {
        let mut d = vec![0.0; n * 4];
        for (i, (o, l)) in outs.iter().zip(labels).enumerate() {
            let w = config.policy_weight(l);
            if w > 0.0 {
                for k in 0..4 {
                    d[i * 4 + k] = w * (o.action_mean[k] - l.action[k]) / config.sigma[k].powi(2) * inv_n;
                }
            }
        }
        seeds.push((v, Tensor::from_f64(&[n, 4], &d)));
    }
    let mut grads = Gradients::zeros_like(params);
    for (idx, g) in forward.tape.backward(seeds) {
        grads.values[idx] = g.to_f64();
    }
    Ok(grads)
}
