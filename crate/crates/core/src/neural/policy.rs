//! Diagonal Gaussian action policy around the network's action mean.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::NetOutput;
use crate::rng::Rng;
use crate::tasksim::ActionSpec;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Standard deviations for (x, y, z, phi).
    pub sigma: [f64; 4],
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            sigma: [0.01, 0.01, 0.01, 0.05],
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::config("policy.sigma", "must be strictly positive"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledAction {
    /// Draw before clamping.
    pub raw: [f64; 4],
    pub action: ActionSpec,
}

pub fn sample_action(output: &NetOutput, config: &PolicyConfig, rng: &mut Rng) -> SampledAction {
    let mut raw = output.action_mean;
    for (v, s) in raw.iter_mut().zip(config.sigma) {
        let e: f64 = StandardNormal.sample(rng);
        *v += s * e;
    }
    SampledAction {
        raw,
        action: ActionSpec::from_array(raw).clamped(),
    }
}

/// Log density of an unclamped action under the policy.
pub fn log_density(output: &NetOutput, action: &[f64; 4], config: &PolicyConfig) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    (0..4)
        .map(|k| {
            let s = config.sigma[k];
            let r = (action[k] - output.action_mean[k]) / s;
            -0.5 * (r * r + ln_2pi) - s.ln()
        })
        .sum()
}
