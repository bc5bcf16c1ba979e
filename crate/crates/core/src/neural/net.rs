//! Three-stream grasp / task / action network.
//!
//! One residual trunk is applied to both crops. The small crop feeds the
//! grasp-quality stream; the large crop feeds the task-quality and action
//! streams. Each stream has its own 1×1 bottleneck, pooling, z embedding and
//! fully connected layers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{BatchStats, ConvSpec, NormMode, Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::depthcam::{central_window, extract_crop_pair, gripper_depth, DepthObservation};
use crate::graspsim::GraspSpec;
use crate::rng::Rng;
use crate::{Error, Result};

/// Depth crops and gripper depth are divided by this after background removal.
pub const INPUT_SCALE: f64 = 0.05;

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub trunk_channels: [usize; 2],
    pub bottleneck: usize,
    pub pool_to: usize,
    pub z_embed: usize,
    pub hidden: usize,
    pub crop_small: usize,
    pub crop_large: usize,
    /// Stride of the first trunk convolution (1 or 2).
    pub stem_stride: usize,
    pub action_scale: [f64; 4],
    /// Zero the last affine layer of every head at initialization.
    pub zero_heads: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            trunk_channels: [16, 32],
            bottleneck: 8,
            pool_to: 8,
            z_embed: 16,
            hidden: 64,
            crop_small: 32,
            crop_large: 64,
            stem_stride: 2,
            action_scale: [0.08, 0.08, 0.08, std::f64::consts::FRAC_PI_8],
            zero_heads: true,
        }
    }
}

impl ArchConfig {
    /// 8-channel trunk on 8×8 / 4×4 crops, for gradient checks.
    pub fn reduced() -> Self {
        ArchConfig {
            trunk_channels: [8, 8],
            bottleneck: 4,
            pool_to: 2,
            z_embed: 4,
            hidden: 8,
            crop_small: 4,
            crop_large: 8,
            stem_stride: 1,
            zero_heads: false,
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("trunk_channels", self.trunk_channels[0].min(self.trunk_channels[1])),
            ("bottleneck", self.bottleneck),
            ("pool_to", self.pool_to),
            ("z_embed", self.z_embed),
            ("hidden", self.hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !matches!(self.stem_stride, 1 | 2) {
            return Err(Error::config("stem_stride", "must be 1 or 2"));
        }
        let reduce = 2 * self.stem_stride;
        for (field, crop) in [("crop_small", self.crop_small), ("crop_large", self.crop_large)] {
            // the strided stages shrink the crop, pooling must divide the result
            if !crop.is_multiple_of(reduce) || !(crop / reduce).is_multiple_of(self.pool_to) {
                return Err(Error::config(field, format!("{crop} is not {reduce}·{}·k", self.pool_to)));
            }
        }
        if self.crop_small > self.crop_large || !(self.crop_large - self.crop_small).is_multiple_of(2) {
            return Err(Error::config("crop_small", "must be centered inside crop_large"));
        }
        if self.action_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("action_scale", "must be positive"));
        }
        Ok(())
    }

    fn flat(&self) -> usize {
        self.bottleneck * self.pool_to * self.pool_to
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta {
    /// Trunk and grasp-quality stream.
    Grasp,
    /// Task-quality stream.
    Task,
    /// Action stream.
    Action,
}

impl Theta {
    pub const ALL: [Theta; 3] = [Theta::Grasp, Theta::Task, Theta::Action];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    He(usize),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub group: Theta,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    w: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
}

#[derive(Clone, Copy, Debug)]
struct TrunkLayout {
    stem: ConvBn,
    res1: [ConvBn; 2],
    down: ConvBn,
    res2: [ConvBn; 2],
}

#[derive(Clone, Copy, Debug)]
struct StreamLayout {
    bottleneck_w: usize,
    bottleneck_b: usize,
    z_w: usize,
    z_b: usize,
    fc_w: usize,
    fc_b: usize,
    head_w: usize,
    head_b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    trunk: TrunkLayout,
    grasp: StreamLayout,
    task: StreamLayout,
    action: StreamLayout,
    infos: Vec<ParamInfo>,
    inits: Vec<Init>,
    bn_channels: Vec<usize>,
}

struct LayoutBuilder {
    infos: Vec<ParamInfo>,
    inits: Vec<Init>,
    bn_channels: Vec<usize>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, group: Theta, shape: &[usize], init: Init) -> usize {
        self.infos.push(ParamInfo {
            name,
            group,
            shape: shape.to_vec(),
        });
        self.inits.push(init);
        self.infos.len() - 1
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvBn {
        let w = self.add(format!("trunk.{name}.w"), Theta::Grasp, &[cout, cin, k, k], Init::He(cin * k * k));
        let gamma = self.add(format!("trunk.{name}.gamma"), Theta::Grasp, &[cout], Init::Ones);
        let beta = self.add(format!("trunk.{name}.beta"), Theta::Grasp, &[cout], Init::Zeros);
        self.bn_channels.push(cout);
        ConvBn {
            w,
            gamma,
            beta,
            bn: self.bn_channels.len() - 1,
        }
    }

    fn stream(&mut self, name: &str, group: Theta, arch: &ArchConfig, outputs: usize) -> StreamLayout {
        let c2 = arch.trunk_channels[1];
        let (b, z, h) = (arch.bottleneck, arch.z_embed, arch.hidden);
        let head_init = if arch.zero_heads { Init::Zeros } else { Init::He(h) };
        StreamLayout {
            bottleneck_w: self.add(format!("{name}.bottleneck.w"), group, &[b, c2, 1, 1], Init::He(c2)),
            bottleneck_b: self.add(format!("{name}.bottleneck.b"), group, &[b], Init::Zeros),
            z_w: self.add(format!("{name}.z.w"), group, &[z, 1], Init::He(1)),
            z_b: self.add(format!("{name}.z.b"), group, &[z], Init::Zeros),
            fc_w: self.add(format!("{name}.fc.w"), group, &[h, arch.flat() + z], Init::He(arch.flat() + z)),
            fc_b: self.add(format!("{name}.fc.b"), group, &[h], Init::Zeros),
            head_w: self.add(format!("{name}.head.w"), group, &[outputs, h], head_init),
            head_b: self.add(format!("{name}.head.b"), group, &[outputs], Init::Zeros),
        }
    }
}

impl Layout {
    fn new(arch: &ArchConfig) -> Layout {
        let [c1, c2] = arch.trunk_channels;
        let mut b = LayoutBuilder {
            infos: Vec::new(),
            inits: Vec::new(),
            bn_channels: Vec::new(),
        };
        let trunk = TrunkLayout {
            stem: b.conv_bn("stem", 1, c1, 3),
            res1: [b.conv_bn("res1.a", c1, c1, 3), b.conv_bn("res1.b", c1, c1, 3)],
            down: b.conv_bn("down", c1, c2, 3),
            res2: [b.conv_bn("res2.a", c2, c2, 3), b.conv_bn("res2.b", c2, c2, 3)],
        };
        let grasp = b.stream("grasp", Theta::Grasp, arch, 1);
        let task = b.stream("task", Theta::Task, arch, 1);
        let action = b.stream("action", Theta::Action, arch, 4);
        Layout {
            trunk,
            grasp,
            task,
            action,
            infos: b.infos,
            inits: b.inits,
            bn_channels: b.bn_channels,
        }
    }
}

/// Running batch-norm statistics for one trunk application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Which crop the trunk is applied to. Each path keeps its own statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrunkPath {
    Small = 0,
    Large = 1,
}

#[derive(Clone, Debug)]
pub struct TogNetParams {
    arch: ArchConfig,
    layout: Layout,
    values: Vec<Vec<f64>>,
    /// `bn[path][layer]`.
    bn: [Vec<RunningStats>; 2],
}

impl PartialEq for TogNetParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.values == other.values && self.bn == other.bn
    }
}

impl TogNetParams {
    pub fn new(arch: ArchConfig, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let values = layout
            .infos
            .iter()
            .zip(&layout.inits)
            .map(|(info, init)| match *init {
                Init::Zeros => vec![0.0; info.len()],
                Init::Ones => vec![1.0; info.len()],
                Init::He(fan_in) => {
                    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    (0..info.len()).map(|_| n.sample(rng)).collect()
                }
            })
            .collect();
        let fresh = || {
            layout
                .bn_channels
                .iter()
                .map(|&c| RunningStats {
                    mean: vec![0.0; c],
                    var: vec![1.0; c],
                })
                .collect::<Vec<_>>()
        };
        let bn = [fresh(), fresh()];
        Ok(TogNetParams { arch, layout, values, bn })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.layout.infos
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.values
    }

    pub fn bn_stats(&self, path: TrunkPath) -> &[RunningStats] {
        &self.bn[path as usize]
    }

    pub fn bn_stats_mut(&mut self, path: TrunkPath) -> &mut [RunningStats] {
        &mut self.bn[path as usize]
    }

    pub fn bn_channels(&self) -> &[usize] {
        &self.layout.bn_channels
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn group_count(&self, group: Theta) -> usize {
        self.params_in(group).map(|i| self.values[i].len()).sum()
    }

    /// Indices of the parameter tensors in one partition.
    pub fn params_in(&self, group: Theta) -> impl Iterator<Item = usize> + '_ {
        self.layout.infos.iter().enumerate().filter(move |(_, p)| p.group == group).map(|(i, _)| i)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.infos.iter().position(|p| p.name == name)
    }

    /// Blends batch statistics into the running averages (unbiased variance).
    pub fn update_running(&mut self, path: TrunkPath, stats: &[BatchStats], momentum: f64) {
        for (run, s) in self.bn[path as usize].iter_mut().zip(stats) {
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for (m, &b) in run.mean.iter_mut().zip(&s.mean) {
                *m = (1.0 - momentum) * *m + momentum * b;
            }
            for (v, &b) in run.var.iter_mut().zip(&s.var) {
                *v = (1.0 - momentum) * *v + momentum * b * unbias;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
            && self.bn.iter().flatten().all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    pub(crate) fn from_parts(arch: ArchConfig, values: Vec<Vec<f64>>, bn: [Vec<RunningStats>; 2]) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if values.len() != layout.infos.len() || values.iter().zip(&layout.infos).any(|(v, i)| v.len() != i.len()) {
            return Err(Error::Shape {
                layer: "params".into(),
                detail: "tensor sizes do not match the architecture".into(),
            });
        }
        for stats in &bn {
            let ok = stats.len() == layout.bn_channels.len()
                && stats.iter().zip(&layout.bn_channels).all(|(s, &c)| s.mean.len() == c && s.var.len() == c);
            if !ok {
                return Err(Error::Shape {
                    layer: "batch_norm".into(),
                    detail: "running statistics do not match the architecture".into(),
                });
            }
        }
        Ok(TogNetParams { arch, layout, values, bn })
    }
}

/// Standardized network input for one grasp.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    pub crop_small: Vec<f64>,
    pub crop_large: Vec<f64>,
    pub z: f64,
}

impl NetInput {
    /// Builds the input from raw crops (metres from the camera) and gripper depth.
    pub fn from_raw(crop_large: &[f64], large: usize, small: usize, background: f64, gripper_depth: f64) -> Self {
        let std = |v: &f64| (v - background) / INPUT_SCALE;
        let crop_large: Vec<f64> = crop_large.iter().map(std).collect();
        NetInput {
            crop_small: central_window(&crop_large, large, small),
            crop_large,
            z: gripper_depth / INPUT_SCALE,
        }
    }

    /// Standard 32/64 crops around a grasp, with the table plane as background.
    pub fn from_observation(obs: &DepthObservation, grasp: &GraspSpec) -> Self {
        let (c64, _) = extract_crop_pair(obs, grasp);
        NetInput::from_raw(&c64, 64, 32, obs.camera.camera_height, gripper_depth(obs, grasp))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetOutput {
    pub q_g: f64,
    pub q_tg: f64,
    pub q_t: f64,
    pub action_mean: [f64; 4],
    pub logit_g: f64,
    pub logit_tg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm; statistics are returned for running averages.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    All,
    /// Skip the large-crop streams (grasp pretraining and grasp-only scoring).
    GraspOnly,
}

/// A forward pass recorded on a tape.
pub struct Forward<T> {
    pub tape: Tape<T>,
    pub batch: usize,
    pub logit_g: Var,
    pub logit_tg: Option<Var>,
    pub action: Option<Var>,
    /// Per trunk path, one entry per batch-norm layer (train mode only).
    pub stats: [Vec<BatchStats>; 2],
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(arch: &ArchConfig, inputs: &[NetInput]) -> Result<()> {
    for (i, inp) in inputs.iter().enumerate() {
        let checks = [
            ("input.crop_small", inp.crop_small.len(), arch.crop_small * arch.crop_small),
            ("input.crop_large", inp.crop_large.len(), arch.crop_large * arch.crop_large),
        ];
        for (layer, got, want) in checks {
            if got != want {
                return Err(Error::Shape {
                    layer: layer.into(),
                    detail: format!("sample {i}: {got} values, expected {want}"),
                });
            }
        }
        if !inp.z.is_finite() || inp.crop_large.iter().chain(&inp.crop_small).any(|v| !v.is_finite()) {
            return Err(Error::Shape {
                layer: "input".into(),
                detail: format!("sample {i}: non-finite value"),
            });
        }
    }
    Ok(())
}

struct Builder<'a, T> {
    params: &'a TogNetParams,
    tape: Tape<T>,
    vars: Vec<Var>,
    mode: Mode,
    gates_in: Option<&'a [Vec<bool>]>,
    gates_out: Option<Vec<Vec<bool>>>,
}

const SAME3: ConvSpec = ConvSpec { kernel: 3, stride: 1, pad: 1 };
const DOWN3: ConvSpec = ConvSpec { kernel: 3, stride: 2, pad: 1 };
const POINT: ConvSpec = ConvSpec { kernel: 1, stride: 1, pad: 0 };

impl<T: Scalar> Builder<'_, T> {
    fn relu(&mut self, x: Var) -> Var {
        let k = self.gates_out.as_ref().map_or(0, Vec::len);
        let y = match self.gates_in {
            Some(g) => self.tape.gated_relu(x, g[k].clone()),
            None => self.tape.relu(x),
        };
        if let Some(out) = &mut self.gates_out {
            out.push(self.tape.value(x).data().iter().map(|&v| v > T::ZERO).collect());
        }
        y
    }

    fn conv_bn(&mut self, x: Var, l: ConvBn, spec: ConvSpec, path: TrunkPath, stats: &mut Vec<BatchStats>) -> Var {
        let y = self.tape.conv2d(x, self.vars[l.w], None, spec);
        let run = &self.params.bn[path as usize][l.bn];
        let norm = match self.mode {
            Mode::Train => NormMode::Batch,
            Mode::Eval => NormMode::Fixed {
                mean: &run.mean,
                var: &run.var,
            },
        };
        let (y, s) = self.tape.batch_norm(y, self.vars[l.gamma], self.vars[l.beta], norm);
        stats.extend(s);
        y
    }

    fn residual(&mut self, x: Var, l: [ConvBn; 2], path: TrunkPath, stats: &mut Vec<BatchStats>) -> Var {
        let h = self.conv_bn(x, l[0], SAME3, path, stats);
        let h = self.relu(h);
        let h = self.conv_bn(h, l[1], SAME3, path, stats);
        let s = self.tape.add(h, x);
        self.relu(s)
    }

    fn trunk(&mut self, x: Var, path: TrunkPath) -> (Var, Vec<BatchStats>) {
        let t = self.params.layout.trunk;
        let mut stats = Vec::new();
        let stem = ConvSpec {
            stride: self.params.arch.stem_stride,
            ..SAME3
        };
        let h = self.conv_bn(x, t.stem, stem, path, &mut stats);
        let h = self.relu(h);
        let h = self.residual(h, t.res1, path, &mut stats);
        let h = self.conv_bn(h, t.down, DOWN3, path, &mut stats);
        let h = self.relu(h);
        let h = self.residual(h, t.res2, path, &mut stats);
        (h, stats)
    }

    fn stream(&mut self, features: Var, z: Var, l: StreamLayout) -> Var {
        let (pool_to, flat) = (self.params.arch.pool_to, self.params.arch.flat());
        let v = self.vars.clone();
        let h = self.tape.conv2d(features, v[l.bottleneck_w], Some(v[l.bottleneck_b]), POINT);
        let h = self.relu(h);
        let side = self.tape.value(h).shape()[2];
        let h = self.tape.avg_pool(h, side / pool_to);
        let n = self.tape.value(h).shape()[0];
        let h = self.tape.reshape(h, &[n, flat]);
        let e = self.tape.linear(z, v[l.z_w], v[l.z_b]);
        let e = self.relu(e);
        let h = self.tape.concat(h, e);
        let h = self.tape.linear(h, v[l.fc_w], v[l.fc_b]);
        let h = self.relu(h);
        self.tape.linear(h, v[l.head_w], v[l.head_b])
    }
}

/// Runs the network on a batch and keeps the tape for [`super::loss::backward`].
pub fn forward_tape<T: Scalar>(params: &TogNetParams, inputs: &[NetInput], mode: Mode, heads: Heads) -> Result<Forward<T>> {
    Ok(forward_impl(params, inputs, mode, heads, None, false)?.0)
}

/// Rectifier on/off patterns of a forward pass, one per rectifier layer in
/// evaluation order.
pub type Gates = Vec<Vec<bool>>;

/// Forward pass that records the rectifier patterns and, if `gates` is given,
/// uses those patterns instead of the signs of the pre-activations.
pub fn forward_tape_gated<T: Scalar>(
    params: &TogNetParams,
    inputs: &[NetInput],
    mode: Mode,
    heads: Heads,
    gates: Option<&[Vec<bool>]>,
) -> Result<(Forward<T>, Gates)> {
    let (f, g) = forward_impl(params, inputs, mode, heads, gates, true)?;
    Ok((f, g.unwrap_or_default()))
}

fn forward_impl<T: Scalar>(
    params: &TogNetParams,
    inputs: &[NetInput],
    mode: Mode,
    heads: Heads,
    gates_in: Option<&[Vec<bool>]>,
    record: bool,
) -> Result<(Forward<T>, Option<Gates>)> {
    let arch = &params.arch;
    if inputs.is_empty() {
        return Err(Error::Shape {
            layer: "input".into(),
            detail: "empty batch".into(),
        });
    }
    check_inputs(arch, inputs)?;
    let n = inputs.len();
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .values
        .iter()
        .zip(&params.layout.infos)
        .enumerate()
        .map(|(i, (v, info))| tape.param(i, Tensor::from_f64(&info.shape, v)))
        .collect();
    let mut b = Builder {
        params,
        tape,
        vars,
        mode,
        gates_in,
        gates_out: (record || gates_in.is_some()).then(Vec::new),
    };
    let (s, l) = (arch.crop_small, arch.crop_large);
    let small: Vec<f64> = inputs.iter().flat_map(|i| i.crop_small.iter().copied()).collect();
    let z: Vec<f64> = inputs.iter().map(|i| i.z).collect();
    let x_small = b.tape.input(Tensor::from_f64(&[n, 1, s, s], &small));
    let z = b.tape.input(Tensor::from_f64(&[n, 1], &z));
    let (f_small, stats_small) = b.trunk(x_small, TrunkPath::Small);
    let logit_g = b.stream(f_small, z, params.layout.grasp);
    let (logit_tg, action, stats_large) = match heads {
        Heads::GraspOnly => (None, None, Vec::new()),
        Heads::All => {
            let large: Vec<f64> = inputs.iter().flat_map(|i| i.crop_large.iter().copied()).collect();
            let x_large = b.tape.input(Tensor::from_f64(&[n, 1, l, l], &large));
            let (f_large, stats_large) = b.trunk(x_large, TrunkPath::Large);
            let tg = b.stream(f_large, z, params.layout.task);
            let raw = b.stream(f_large, z, params.layout.action);
            let act = b.tape.scaled_tanh(raw, &arch.action_scale);
            (Some(tg), Some(act), stats_large)
        }
    };
    let forward = Forward {
        tape: b.tape,
        batch: n,
        logit_g,
        logit_tg,
        action,
        stats: [stats_small, stats_large],
    };
    Ok((forward, b.gates_out.filter(|_| record)))
}

impl<T: Scalar> Forward<T> {
    pub fn outputs(&self) -> Vec<NetOutput> {
        let g = self.tape.value(self.logit_g).data();
        let tg = self.logit_tg.map(|v| self.tape.value(v).data());
        let act = self.action.map(|v| self.tape.value(v).data());
        (0..self.batch)
            .map(|i| {
                let logit_g = g[i].to_f64();
                let logit_tg = tg.map_or(0.0, |t| t[i].to_f64());
                let q_g = sigmoid(logit_g);
                let q_tg = if tg.is_some() { sigmoid(logit_tg) } else { 0.0 };
                let mut action_mean = [0.0; 4];
                if let Some(a) = act {
                    for (k, v) in action_mean.iter_mut().enumerate() {
                        *v = a[i * 4 + k].to_f64();
                    }
                }
                NetOutput {
                    q_g,
                    q_tg,
                    q_t: q_tg * q_g,
                    action_mean,
                    logit_g,
                    logit_tg,
                }
            })
            .collect()
    }
}

/// Samples per eval forward; bounds tape memory.
pub const EVAL_CHUNK: usize = 32;

/// Eval-mode outputs in 64-bit, chunked. Results do not depend on the chunking.
pub fn forward(params: &TogNetParams, inputs: &[NetInput]) -> Result<Vec<NetOutput>> {
    forward_heads(params, inputs, Heads::All)
}

pub fn forward_heads(params: &TogNetParams, inputs: &[NetInput], heads: Heads) -> Result<Vec<NetOutput>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let f = forward_tape::<f64>(params, chunk, Mode::Eval, heads)?;
        out.extend(f.outputs());
    }
    Ok(out)
}

/// Random input with the standard shapes, for tests and benchmarks.
pub fn random_input(arch: &ArchConfig, rng: &mut Rng) -> NetInput {
    let (l, s) = (arch.crop_large, arch.crop_small);
    let large: Vec<f64> = (0..l * l).map(|_| rng.random_range(-1.0..1.0)).collect();
    NetInput {
        crop_small: central_window(&large, l, s),
        crop_large: large,
        z: rng.random_range(-1.0..1.0),
    }
}
