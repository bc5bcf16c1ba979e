//! Reverse-mode differentiation over the layer set the network uses.

use super::tensor::{col2im, conv_out, im2col, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

enum Op<T> {
    Input,
    Param(usize),
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu { x: Var, gate: Option<Vec<bool>> },
    Add { a: Var, b: Var },
    AvgPool { x: Var, k: usize },
    Linear { x: Var, w: Var, b: Var },
    Concat { a: Var, b: Var },
    ScaledTanh { x: Var, scale: Vec<T> },
    Reshape { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Batch statistics produced by a train-mode batch-norm, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub enum NormMode<'a> {
    /// Normalize with the batch's own statistics.
    Batch,
    /// Normalize with fixed statistics.
    Fixed { mean: &'a [f64], var: &'a [f64] },
}

pub const BN_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, index: usize, t: Tensor<T>) -> Var {
        self.push(t, Op::Param(index), true)
    }

    /// `x`: N×C×H×W, `w`: O×C×k×k, `b`: O.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], spec.kernel);
        assert_eq!(ws[1..], [c, k, k], "conv weight {ws:?} vs input {xs:?}");
        let oh = conv_out(h, k, spec.stride, spec.pad);
        let ow = conv_out(wd, k, spec.stride, spec.pad);
        let plane = oh * ow;
        let ckk = c * k * k;
        let mut out = vec![T::ZERO; n * o * plane];
        let direct = k == 1 && spec.stride == 1 && spec.pad == 0;
        let mut cols = if direct { Vec::new() } else { vec![T::ZERO; ckk * plane] };
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                let img = &xv[i * c * h * wd..(i + 1) * c * h * wd];
                let src: &[T] = if direct {
                    img
                } else {
                    im2col(img, c, h, wd, k, spec.stride, spec.pad, &mut cols);
                    &cols
                };
                T::gemm(o, ckk, plane, T::ONE, wv, false, src, false, T::ZERO, &mut out[i * o * plane..(i + 1) * o * plane]);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for i in 0..n {
                    for (oc, &bias) in bv.iter().enumerate() {
                        for v in &mut out[(i * o + oc) * plane..(i * o + oc + 1) * plane] {
                            *v += bias;
                        }
                    }
                }
            }
        }
        let g = self.grad_flag(&[x, w]) || b.is_some_and(|b| self.nodes[b.0].needs_grad);
        self.push(Tensor::from_vec(&[n, o, oh, ow], out), Op::Conv { x, w, b, spec }, g)
    }

    /// Per-channel normalization over N×H×W. Returns the batch statistics in
    /// [`NormMode::Batch`].
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: NormMode<'_>) -> (Var, Option<BatchStats>) {
        let xs = self.value(x).shape().to_vec();
        let (n, c) = (xs[0], xs[1]);
        let plane: usize = xs[2..].iter().product();
        let m = n * plane;
        let xv = self.value(x).data();
        let (mean, var, stats) = match mode {
            NormMode::Batch => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for i in 0..n {
                    for ch in 0..c {
                        let s = &xv[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                        mean[ch] += s.iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                }
                for mu in &mut mean {
                    *mu /= m as f64;
                }
                for i in 0..n {
                    for ch in 0..c {
                        let s = &xv[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                        var[ch] += s.iter().map(|v| (v.to_f64() - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                for v in &mut var {
                    *v /= m as f64;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: m,
                };
                (mean, var, Some(stats))
            }
            NormMode::Fixed { mean, var } => (mean.to_vec(), var.to_vec(), None),
        };
        assert_eq!(mean.len(), c, "batch-norm statistics for {} channels, input has {c}", mean.len());
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v + BN_EPS).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::ZERO; xv.len()];
        let mut out = vec![T::ZERO; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                for ((xh, o), &xi) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xv[r]) {
                    *xh = (xi - mean_t[ch]) * inv_std[ch];
                    *o = gv[ch] * *xh + bv[ch];
                }
            }
        }
        let batch_stats = stats.is_some();
        let g = self.grad_flag(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_vec(&xs, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            g,
        );
        (v, stats)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out: Vec<T> = t.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
        let shape = t.shape().to_vec();
        let g = self.grad_flag(&[x]);
        self.push(Tensor::from_vec(&shape, out), Op::Relu { x, gate: None }, g)
    }

    /// Rectifier whose on/off pattern is given instead of read from the sign
    /// of `x`. Inside one activation region this is the same function as
    /// [`Tape::relu`]; gradient checks use it to keep a finite-difference
    /// stencil from straddling a kink.
    pub fn gated_relu(&mut self, x: Var, gate: Vec<bool>) -> Var {
        let t = self.value(x);
        assert_eq!(gate.len(), t.len(), "relu gate length");
        let out: Vec<T> = t.data().iter().zip(&gate).map(|(&v, &on)| if on { v } else { T::ZERO }).collect();
        let shape = t.shape().to_vec();
        let g = self.grad_flag(&[x]);
        self.push(Tensor::from_vec(&shape, out), Op::Relu { x, gate: Some(gate) }, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        let g = self.grad_flag(&[a, b]);
        self.push(t, Op::Add { a, b }, g)
    }

    /// Non-overlapping k×k average pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(h % k == 0 && w % k == 0, "pool {k} does not divide {h}x{w}");
        let (oh, ow) = (h / k, w / k);
        let xv = self.value(x).data();
        let mut out = vec![T::ZERO; n * c * oh * ow];
        let inv = T::from_f64(1.0 / (k * k) as f64);
        for nc in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    out[(nc * oh + y / k) * ow + xx / k] += xv[(nc * h + y) * w + xx];
                }
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let g = self.grad_flag(&[x]);
        self.push(Tensor::from_vec(&[n, c, oh, ow], out), Op::AvgPool { x, k }, g)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let g = self.grad_flag(&[x]);
        self.push(t, Op::Reshape { x }, g)
    }

    /// `x`: N×I, `w`: O×I, `b`: O.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (n, i) = (xs[0], xs[1]);
        let o = ws[0];
        assert_eq!(ws[1], i, "linear weight {ws:?} vs input {xs:?}");
        let mut out = vec![T::ZERO; n * o];
        let bv = self.value(b).data();
        for r in 0..n {
            out[r * o..(r + 1) * o].copy_from_slice(bv);
        }
        T::gemm(n, i, o, T::ONE, self.value(x).data(), false, self.value(w).data(), true, T::ONE, &mut out);
        let g = self.grad_flag(&[x, w, b]);
        self.push(Tensor::from_vec(&[n, o], out), Op::Linear { x, w, b }, g)
    }

    /// Concatenates two N×F matrices along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        assert_eq!(sa[0], sb[0], "concat batch mismatch");
        let (n, fa, fb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (fa + fb));
        for r in 0..n {
            out.extend_from_slice(&self.value(a).data()[r * fa..(r + 1) * fa]);
            out.extend_from_slice(&self.value(b).data()[r * fb..(r + 1) * fb]);
        }
        let g = self.grad_flag(&[a, b]);
        self.push(Tensor::from_vec(&[n, fa + fb], out), Op::Concat { a, b }, g)
    }

    /// Column-wise `scale[j] · tanh(x)` on an N×D matrix.
    pub fn scaled_tanh(&mut self, x: Var, scale: &[f64]) -> Var {
        let xs = self.value(x).shape().to_vec();
        let d = xs[1];
        assert_eq!(scale.len(), d);
        let scale: Vec<T> = scale.iter().map(|&s| T::from_f64(s)).collect();
        let out: Vec<T> = self.value(x).data().iter().enumerate().map(|(i, &v)| scale[i % d] * v.tanh()).collect();
        let g = self.grad_flag(&[x]);
        self.push(Tensor::from_vec(&xs, out), Op::ScaledTanh { x, scale }, g)
    }

    /// Propagates `seeds` (d loss / d node) back to the parameters. Returns
    /// one accumulated gradient per parameter index that was touched.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Vec<(usize, Tensor<T>)> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(v).shape(), "seed shape mismatch");
            accumulate(&mut grads, v, g);
        }
        let mut params: Vec<(usize, Tensor<T>)> = Vec::new();
        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(p) => match params.iter_mut().find(|(q, _)| q == p) {
                    Some((_, acc)) => acc.add_assign(&gy),
                    None => params.push((*p, gy)),
                },
                Op::Conv { x, w, b, spec } => self.conv_backward(&mut grads, &gy, *x, *w, *b, *spec),
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => self.bn_backward(&mut grads, &gy, (*x, *gamma, *beta), xhat, inv_std, *batch_stats),
                Op::Relu { x, gate } => {
                    let d: Vec<T> = match gate {
                        Some(gate) => gy.data().iter().zip(gate).map(|(&g, &on)| if on { g } else { T::ZERO }).collect(),
                        None => {
                            let yv = node.value.data();
                            gy.data().iter().zip(yv).map(|(&g, &y)| if y > T::ZERO { g } else { T::ZERO }).collect()
                        }
                    };
                    self.send(&mut grads, *x, Tensor::from_vec(gy.shape(), d));
                }
                Op::Add { a, b } => {
                    self.send(&mut grads, *a, gy.clone());
                    self.send(&mut grads, *b, gy);
                }
                Op::AvgPool { x, k } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (h, w) = (xs[2], xs[3]);
                    let (oh, ow) = (h / k, w / k);
                    let inv = T::from_f64(1.0 / (k * k) as f64);
                    let mut d = vec![T::ZERO; xs.iter().product()];
                    for nc in 0..xs[0] * xs[1] {
                        for y in 0..h {
                            for xx in 0..w {
                                d[(nc * h + y) * w + xx] = gy.data()[(nc * oh + y / k) * ow + xx / k] * inv;
                            }
                        }
                    }
                    self.send(&mut grads, *x, Tensor::from_vec(&xs, d));
                }
                Op::Reshape { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    self.send(&mut grads, *x, gy.reshaped(&shape));
                }
                Op::Linear { x, w, b } => {
                    let (n, i) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                    let o = self.value(*w).shape()[0];
                    if self.nodes[x.0].needs_grad {
                        let mut dx = vec![T::ZERO; n * i];
                        T::gemm(n, o, i, T::ONE, gy.data(), false, self.value(*w).data(), false, T::ZERO, &mut dx);
                        self.send(&mut grads, *x, Tensor::from_vec(&[n, i], dx));
                    }
                    if self.nodes[w.0].needs_grad {
                        let mut dw = vec![T::ZERO; o * i];
                        T::gemm(o, n, i, T::ONE, gy.data(), true, self.value(*x).data(), false, T::ZERO, &mut dw);
                        self.send(&mut grads, *w, Tensor::from_vec(&[o, i], dw));
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut db = vec![T::ZERO; o];
                        for r in 0..n {
                            for (acc, &g) in db.iter_mut().zip(&gy.data()[r * o..(r + 1) * o]) {
                                *acc += g;
                            }
                        }
                        self.send(&mut grads, *b, Tensor::from_vec(&[o], db));
                    }
                }
                Op::Concat { a, b } => {
                    let (n, fa) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let fb = self.value(*b).shape()[1];
                    let mut da = Vec::with_capacity(n * fa);
                    let mut db = Vec::with_capacity(n * fb);
                    for r in 0..n {
                        let row = &gy.data()[r * (fa + fb)..(r + 1) * (fa + fb)];
                        da.extend_from_slice(&row[..fa]);
                        db.extend_from_slice(&row[fa..]);
                    }
                    self.send(&mut grads, *a, Tensor::from_vec(&[n, fa], da));
                    self.send(&mut grads, *b, Tensor::from_vec(&[n, fb], db));
                }
                Op::ScaledTanh { x, scale } => {
                    let d = scale.len();
                    let xv = self.value(*x).data();
                    let dx: Vec<T> = gy
                        .data()
                        .iter()
                        .zip(xv)
                        .enumerate()
                        .map(|(i, (&g, &v))| {
                            let t = v.tanh();
                            g * scale[i % d] * (T::ONE - t * t)
                        })
                        .collect();
                    self.send(&mut grads, *x, Tensor::from_vec(gy.shape(), dx));
                }
            }
        }
        params.sort_by_key(|(p, _)| *p);
        params
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if self.nodes[v.0].needs_grad {
            accumulate(grads, v, g);
        }
    }

    fn conv_backward(&self, grads: &mut [Option<Tensor<T>>], gy: &Tensor<T>, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], spec.kernel);
        let oh = conv_out(h, k, spec.stride, spec.pad);
        let ow = conv_out(wd, k, spec.stride, spec.pad);
        let plane = oh * ow;
        let ckk = c * k * k;
        let direct = k == 1 && spec.stride == 1 && spec.pad == 0;
        let need_x = self.nodes[x.0].needs_grad;
        let need_w = self.nodes[w.0].needs_grad;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let gv = gy.data();
        let mut dw = vec![T::ZERO; if need_w { o * ckk } else { 0 }];
        let mut dx = vec![T::ZERO; if need_x { xv.len() } else { 0 }];
        let mut cols = vec![T::ZERO; if direct { 0 } else { ckk * plane }];
        let mut dcols = vec![T::ZERO; if need_x && !direct { ckk * plane } else { 0 }];
        for i in 0..n {
            let img = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            let g_i = &gv[i * o * plane..(i + 1) * o * plane];
            if need_w {
                let src: &[T] = if direct {
                    img
                } else {
                    im2col(img, c, h, wd, k, spec.stride, spec.pad, &mut cols);
                    &cols
                };
                T::gemm(o, plane, ckk, T::ONE, g_i, false, src, true, T::ONE, &mut dw);
            }
            if need_x {
                let dimg = &mut dx[i * c * h * wd..(i + 1) * c * h * wd];
                if direct {
                    T::gemm(ckk, o, plane, T::ONE, wv, true, g_i, false, T::ZERO, dimg);
                } else {
                    T::gemm(ckk, o, plane, T::ONE, wv, true, g_i, false, T::ZERO, &mut dcols);
                    col2im(&dcols, c, h, wd, k, spec.stride, spec.pad, dimg);
                }
            }
        }
        if need_x {
            self.send(grads, x, Tensor::from_vec(&xs, dx));
        }
        if need_w {
            self.send(grads, w, Tensor::from_vec(&ws, dw));
        }
        if let Some(b) = b {
            if self.nodes[b.0].needs_grad {
                let mut db = vec![T::ZERO; o];
                for i in 0..n {
                    for (oc, acc) in db.iter_mut().enumerate() {
                        for &g in &gv[(i * o + oc) * plane..(i * o + oc + 1) * plane] {
                            *acc += g;
                        }
                    }
                }
                self.send(grads, b, Tensor::from_vec(&[o], db));
            }
        }
    }

    fn bn_backward(
        &self,
        grads: &mut [Option<Tensor<T>>],
        gy: &Tensor<T>,
        (x, gamma, beta): (Var, Var, Var),
        xhat: &[T],
        inv_std: &[T],
        batch_stats: bool,
    ) {
        let xs = self.value(x).shape().to_vec();
        let (n, c) = (xs[0], xs[1]);
        let plane: usize = xs[2..].iter().product();
        let m = T::from_f64((n * plane) as f64);
        let gv = self.value(gamma).data();
        let dy = gy.data();
        let mut dgamma = vec![T::ZERO; c];
        let mut dbeta = vec![T::ZERO; c];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                for (&g, &xh) in dy[r.clone()].iter().zip(&xhat[r]) {
                    dgamma[ch] += g * xh;
                    dbeta[ch] += g;
                }
            }
        }
        if self.nodes[x.0].needs_grad {
            let mut dx = vec![T::ZERO; dy.len()];
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                    let scale = gv[ch] * inv_std[ch];
                    for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xhat[r]) {
                        *d = if batch_stats {
                            scale * (g - (dbeta[ch] + xh * dgamma[ch]) / m)
                        } else {
                            scale * g
                        };
                    }
                }
            }
            self.send(grads, x, Tensor::from_vec(&xs, dx));
        }
        self.send(grads, gamma, Tensor::from_vec(&[c], dgamma));
        self.send(grads, beta, Tensor::from_vec(&[c], dbeta));
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
