//! Central-difference gradient oracle for the network.

use togsim_core::neural::net::{forward_tape_gated, Gates};
use togsim_core::neural::*;

pub struct Report {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
    /// Parameters whose error exceeds the bound while the ±h passes switch
    /// at least one rectifier.
    pub kink_straddles: usize,
    /// Parameters whose error exceeds the bound with no rectifier switching.
    pub smooth_failures: usize,
}

pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn loss_at(p: &TogNetParams, x: &[NetInput], y: &[Labels], cfg: &LossConfig, gates: Option<&Gates>) -> (f64, Gates) {
    let (f, g) = forward_tape_gated::<f64>(p, x, Mode::Eval, Heads::All, gates.map(|g| g.as_slice())).unwrap();
    (joint_loss(&f, y, cfg).unwrap().total, g)
}

/// Compares every scalar parameter's analytic gradient with
/// `(L(θ+h) − L(θ−h)) / 2h`. With `freeze` the rectifier pattern of the base
/// point is held fixed in the perturbed passes.
pub fn check(p: &TogNetParams, x: &[NetInput], y: &[Labels], cfg: &LossConfig, h: f64, bound: f64, freeze: bool) -> Report {
    let (f, base_gates) = forward_tape_gated::<f64>(p, x, Mode::Eval, Heads::All, None).unwrap();
    let g = backward(&f, y, cfg, p).unwrap();
    let mut r = Report {
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
        kink_straddles: 0,
        smooth_failures: 0,
    };
    let frozen = freeze.then_some(&base_gates);
    let mut q = p.clone();
    for (t, info) in p.infos().iter().enumerate() {
        for j in 0..info.len() {
            let orig = p.values()[t][j];
            q.values_mut()[t][j] = orig + h;
            let (lp, gp) = loss_at(&q, x, y, cfg, frozen);
            q.values_mut()[t][j] = orig - h;
            let (lm, gm) = loss_at(&q, x, y, cfg, frozen);
            q.values_mut()[t][j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = g.values[t][j];
            let rel = rel_err(analytic, numeric);
            if rel > bound {
                let switched = if freeze { false } else { gp != base_gates || gm != base_gates };
                if switched {
                    r.kink_straddles += 1;
                } else {
                    r.smooth_failures += 1;
                }
            }
            if rel > r.max_rel && (freeze || !(gp != base_gates || gm != base_gates)) {
                r.max_rel = rel;
                r.worst = format!("{}[{j}]: analytic {analytic:e} numeric {numeric:e}", info.name);
            }
            r.checked += 1;
        }
    }
    r
}
