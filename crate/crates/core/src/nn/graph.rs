//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! pulled from a [`ParamStore`] once per graph, so a module applied twice
//! (the shared feature extractor) accumulates gradients from both uses.

use std::collections::HashMap;

use super::conv::{self, ConvGeom};
use super::functional;
use super::interp;
use super::params::{ParamId, ParamStore};
use crate::costvolume;
use crate::tensor::{split_axis, Tensor};

pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How batch normalization layers obtain their statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the statistics of the current batch; optionally
    /// record updates for the running estimates.
    Batch { track_running: bool },
    /// Normalize with the stored running estimates.
    Running,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Batch statistics observed by one normalization layer.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f32>,
    /// Unbiased variance estimate.
    pub var: Vec<f32>,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f32>, inv_std: Vec<f32>, batch_stats: bool },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f32),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    Correlation { left: Var, right: Var, groups: usize },
    Gate { volume: Var, weights: Var },
    Resize { x: Var, targets: Vec<(usize, usize)> },
    Softmax { x: Var, axis: usize },
    Expectation { p: Var, axis: usize },
    Loss { x: Var, grad: Tensor },
    WeightedSum(Vec<(Var, f32)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    norm: NormMode,
    with_grad: bool,
    param_vars: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
    macs: u64,
}

/// Gradients of leaf variables after [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }
}

impl Graph {
    pub fn new(norm: NormMode, with_grad: bool) -> Self {
        Graph { nodes: Vec::new(), norm, with_grad, param_vars: HashMap::new(), bn_updates: Vec::new(), macs: 0 }
    }

    /// Batch statistics, running-stat tracking, parameter gradients.
    pub fn training() -> Self {
        Self::new(NormMode::Batch { track_running: true }, true)
    }

    /// Running statistics, no gradients.
    pub fn inference() -> Self {
        Self::new(NormMode::Running, false)
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Multiply-accumulates of all convolutions recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// Folds recorded batch statistics into the running estimates.
    pub fn apply_bn_updates(&self, store: &mut ParamStore, momentum: f32) {
        for u in &self.bn_updates {
            for (r, m) in store.value_mut(u.running_mean).data_mut().iter_mut().zip(&u.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in store.value_mut(u.running_var).data_mut().iter_mut().zip(&u.var) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), self.with_grad);
        self.param_vars.insert(id, v);
        v
    }

    fn spatial(&self, x: Var, g: &ConvGeom) -> usize {
        let s = self.shape(x);
        let dims = match s.len() {
            4 => [1, s[2], s[3]],
            5 => [s[2], s[3], s[4]],
            _ => panic!("convolution input must be rank 4 or 5, got {s:?}"),
        };
        assert_eq!(s[1], g.in_channels, "convolution channel mismatch");
        assert_eq!(dims, g.in_dims, "convolution input size mismatch");
        s[0]
    }

    pub fn conv(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let batch = self.spatial(x, &geom);
        assert_eq!(self.value(w).numel(), geom.weight_len());
        let y = conv::conv_forward(self.value(x).data(), self.value(w).data(), &geom, batch);
        let od = geom.out_dims();
        let shape = if self.shape(x).len() == 4 {
            vec![batch, geom.out_channels, od[1], od[2]]
        } else {
            vec![batch, geom.out_channels, od[0], od[1], od[2]]
        };
        self.macs += geom.macs() * batch as u64;
        let rg = self.any_grad(&[x, w]);
        self.push(Tensor::from_vec(&shape, y).unwrap(), Op::Conv { x, w, geom }, rg)
    }

    /// Transposed 3-D convolution; `geom` is the forward convolution whose
    /// adjoint is applied, so the output grid is `geom.in_dims`.
    pub fn conv_transpose(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 5);
        assert_eq!(s[1], geom.out_channels, "transposed convolution channel mismatch");
        assert_eq!([s[2], s[3], s[4]], geom.out_dims(), "transposed convolution size mismatch");
        let batch = s[0];
        let y = conv::conv_transpose_forward(self.value(x).data(), self.value(w).data(), &geom, batch);
        let [d, h, w_] = geom.in_dims;
        // counted on the output grid, like a forward convolution
        self.macs += (geom.in_channels * geom.out_channels * geom.kernel_volume() * geom.in_volume() * batch) as u64;
        let rg = self.any_grad(&[x, w]);
        let t = Tensor::from_vec(&[batch, geom.in_channels, d, h, w_], y).unwrap();
        self.push(t, Op::ConvTranspose { x, w, geom }, rg)
    }

    pub fn batch_norm(&mut self, store: &ParamStore, x: Var, ids: &BatchNormIds) -> Var {
        let gamma = self.param(store, ids.gamma);
        let beta = self.param(store, ids.beta);
        let shape = self.shape(x).to_vec();
        let (outer, channels, inner) = split_axis(&shape, 1);
        let xv = self.nodes[x.0].value.data();
        let count = outer * inner;
        let (mean, inv_std, batch_stats) = match self.norm {
            NormMode::Batch { track_running } => {
                let mut mean = vec![0.0f32; channels];
                let mut var = vec![0.0f32; channels];
                for c in 0..channels {
                    let mut s = 0.0f64;
                    for o in 0..outer {
                        s += xv[(o * channels + c) * inner..][..inner].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0f64;
                    for o in 0..outer {
                        ss += xv[(o * channels + c) * inner..][..inner]
                            .iter()
                            .map(|&v| (v as f64 - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[c] = m as f32;
                    var[c] = (ss / count as f64) as f32;
                }
                if track_running {
                    let unbias = if count > 1 { count as f32 / (count - 1) as f32 } else { 1.0 };
                    self.bn_updates.push(BnUpdate {
                        running_mean: ids.running_mean,
                        running_var: ids.running_var,
                        mean: mean.clone(),
                        var: var.iter().map(|v| v * unbias).collect(),
                    });
                }
                let inv: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv, true)
            }
            NormMode::Running => {
                let mean = store.value(ids.running_mean).data().to_vec();
                let inv: Vec<f32> =
                    store.value(ids.running_var).data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv, false)
            }
        };
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut y = vec![0.0f32; xv.len()];
        for o in 0..outer {
            for c in 0..channels {
                let k = (o * channels + c) * inner;
                let (m, s, g, b) = (mean[c], inv_std[c], gv[c], bv[c]);
                for (dst, &v) in y[k..k + inner].iter_mut().zip(&xv[k..k + inner]) {
                    *dst = g * (v - m) * s + b;
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats };
        self.push(Tensor::from_vec(&shape, y).unwrap(), op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(y, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Scale(x, factor), rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.concat_axis(parts, 1)
    }

    pub fn concat_axis(&mut self, parts: &[Var], axis: usize) -> Var {
        let first = self.shape(parts[0]).to_vec();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (i, (a, b)) in s.iter().zip(&first).enumerate() {
                assert!(i == axis || a == b, "concat shape mismatch");
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.dim(axis) * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let rg = self.any_grad(parts);
        let op = Op::Concat { parts: parts.to_vec(), axis };
        self.push(Tensor::from_vec(&shape, data).unwrap(), op, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).clone().reshape(shape).expect("reshape size");
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Reshape(x), rg)
    }

    /// Group-wise correlation volume `[B, groups, max_disp, H, W]` of two
    /// `[B, C, H, W]` feature maps.
    pub fn correlation(&mut self, left: Var, right: Var, groups: usize, max_disp: usize) -> Var {
        let s = self.shape(left).to_vec();
        assert_eq!(s, self.shape(right), "correlation feature shapes differ");
        let out = costvolume::correlation_forward(
            self.value(left).data(),
            self.value(right).data(),
            [s[0], s[1], s[2], s[3]],
            groups,
            max_disp,
        );
        let shape = [s[0], groups, max_disp, s[2], s[3]];
        let rg = self.any_grad(&[left, right]);
        self.push(Tensor::from_vec(&shape, out).unwrap(), Op::Correlation { left, right, groups }, rg)
    }

    /// `volume[b, g, ...] * weights[b, 0, ...]`, broadcast over groups.
    pub fn gate(&mut self, volume: Var, weights: Var) -> Var {
        let vs = self.shape(volume).to_vec();
        let ws = self.shape(weights).to_vec();
        assert_eq!(ws[1], 1);
        assert_eq!(vs[0], ws[0]);
        assert_eq!(&vs[2..], &ws[2..], "gate shape mismatch");
        let inner: usize = vs[2..].iter().product();
        let (v, w) = (self.value(volume).data(), self.value(weights).data());
        let mut out = vec![0.0; v.len()];
        for b in 0..vs[0] {
            let wb = &w[b * inner..(b + 1) * inner];
            for g in 0..vs[1] {
                let k = (b * vs[1] + g) * inner;
                for ((o, &x), &a) in out[k..k + inner].iter_mut().zip(&v[k..k + inner]).zip(wb) {
                    *o = x * a;
                }
            }
        }
        let rg = self.any_grad(&[volume, weights]);
        self.push(Tensor::from_vec(&vs, out).unwrap(), Op::Gate { volume, weights }, rg)
    }

    /// Linear resampling of the listed `(axis, new_len)` pairs.
    pub fn resize(&mut self, x: Var, targets: &[(usize, usize)]) -> Var {
        let (data, shape) = interp::resize(self.value(x).data(), self.shape(x), targets);
        let rg = self.any_grad(&[x]);
        let op = Op::Resize { x, targets: targets.to_vec() };
        self.push(Tensor::from_vec(&shape, data).unwrap(), op, rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (o, l, i) = split_axis(&shape, axis);
        let y = functional::softmax_axis(self.value(x).data(), o, l, i);
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_vec(&shape, y).unwrap(), Op::Softmax { x, axis }, rg)
    }

    /// `Σ_d d·p(d)` along `axis`; the axis is removed from the shape.
    pub fn expectation(&mut self, p: Var, axis: usize) -> Var {
        let shape = self.shape(p).to_vec();
        let (o, l, i) = split_axis(&shape, axis);
        let y = functional::expectation_axis(self.value(p).data(), o, l, i);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.any_grad(&[p]);
        self.push(Tensor::from_vec(&out_shape, y).unwrap(), Op::Expectation { p, axis }, rg)
    }

    /// A scalar loss node whose gradient w.r.t. `x` was computed alongside
    /// its value.
    pub fn loss(&mut self, x: Var, value: f32, grad: Tensor) -> Var {
        assert_eq!(grad.shape(), self.shape(x), "loss gradient shape");
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(value), Op::Loss { x, grad }, rg)
    }

    /// `Σ w_i · s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Var {
        let mut total = 0.0;
        for (v, w) in terms {
            assert_eq!(self.value(*v).numel(), 1, "weighted_sum expects scalars");
            total += w * self.value(*v).item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Back-propagates from the scalar `root`. Parameter gradients are added
    /// to `store`; gradients of [`Graph::leaf`] inputs are returned.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Gradients {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut out = Gradients::default();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, g);
                }
                Op::Param(id) => store.grad_mut(*id).add_assign(&g),
                Op::Conv { x, w, geom } => {
                    let xv = self.value(*x);
                    let batch = xv.dim(0);
                    let need_dx = self.requires_grad(*x);
                    let (dx, dw) =
                        conv::conv_backward(xv.data(), self.value(*w).data(), g.data(), geom, batch, need_dx);
                    if let Some(dx) = dx {
                        self.acc(&mut grads, *x, dx);
                    }
                    self.acc(&mut grads, *w, dw);
                }
                Op::ConvTranspose { x, w, geom } => {
                    let xv = self.value(*x);
                    let batch = xv.dim(0);
                    let need_dx = self.requires_grad(*x);
                    let (dx, dw) =
                        conv::conv_transpose_backward(xv.data(), self.value(*w).data(), g.data(), geom, batch, need_dx);
                    if let Some(dx) = dx {
                        self.acc(&mut grads, *x, dx);
                    }
                    self.acc(&mut grads, *w, dw);
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                    self.backward_bn(&mut grads, &g, *x, *gamma, *beta, mean, inv_std, *batch_stats)
                }
                Op::Relu(x) => {
                    let d =
                        g.data().iter().zip(node.value.data()).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                    self.acc(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = g.data().iter().zip(node.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.acc(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, g.data().to_vec());
                    self.acc(&mut grads, *b, g.into_data());
                }
                Op::Scale(x, f) => {
                    let d = g.data().iter().map(|v| v * f).collect();
                    self.acc(&mut grads, *x, d);
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = split_axis(g.shape(), *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).dim(*axis);
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[start..start + len * inner]);
                        }
                        self.acc(&mut grads, *p, d);
                        offset += len;
                    }
                }
                Op::Reshape(x) => self.acc(&mut grads, *x, g.into_data()),
                Op::Correlation { left, right, groups } => {
                    let s = self.shape(*left);
                    let (dl, dr) = costvolume::correlation_backward(
                        self.value(*left).data(),
                        self.value(*right).data(),
                        g.data(),
                        [s[0], s[1], s[2], s[3]],
                        *groups,
                        g.dim(2),
                    );
                    self.acc(&mut grads, *left, dl);
                    self.acc(&mut grads, *right, dr);
                }
                Op::Gate { volume, weights } => {
                    let vs = self.shape(*volume);
                    let inner: usize = vs[2..].iter().product();
                    let (v, w) = (self.value(*volume).data(), self.value(*weights).data());
                    let mut dv = vec![0.0; v.len()];
                    let mut dw = vec![0.0; w.len()];
                    for b in 0..vs[0] {
                        for c in 0..vs[1] {
                            let k = (b * vs[1] + c) * inner;
                            for i in 0..inner {
                                let gv = g.data()[k + i];
                                dv[k + i] = gv * w[b * inner + i];
                                dw[b * inner + i] += gv * v[k + i];
                            }
                        }
                    }
                    self.acc(&mut grads, *volume, dv);
                    self.acc(&mut grads, *weights, dw);
                }
                Op::Resize { x, targets } => {
                    let d = interp::resize_adjoint(g.data(), self.shape(*x), targets);
                    self.acc(&mut grads, *x, d);
                }
                Op::Softmax { x, axis } => {
                    let (o, l, inn) = split_axis(node.value.shape(), *axis);
                    let d = functional::softmax_axis_backward(node.value.data(), g.data(), o, l, inn);
                    self.acc(&mut grads, *x, d);
                }
                Op::Expectation { p, axis } => {
                    let (o, l, inn) = split_axis(self.shape(*p), *axis);
                    let d = functional::expectation_axis_backward(g.data(), o, l, inn);
                    self.acc(&mut grads, *p, d);
                }
                Op::Loss { x, grad } => {
                    let s = g.item();
                    let d = grad.data().iter().map(|v| v * s).collect();
                    self.acc(&mut grads, *x, d);
                }
                Op::WeightedSum(terms) => {
                    let s = g.item();
                    for (v, w) in terms {
                        self.acc(&mut grads, *v, vec![s * w]);
                    }
                }
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, d: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        match slot {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&d) {
                    *a += *b;
                }
            }
            None => *slot = Some(Tensor::from_vec(self.shape(v), d).expect("gradient shape")),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_bn(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f32],
        inv_std: &[f32],
        batch_stats: bool,
    ) {
        let shape = self.shape(x);
        let (outer, channels, inner) = split_axis(shape, 1);
        let count = (outer * inner) as f32;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let dy = g.data();
        let mut dgamma = vec![0.0f32; channels];
        let mut dbeta = vec![0.0f32; channels];
        for c in 0..channels {
            let (m, s) = (mean[c], inv_std[c]);
            let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
            for o in 0..outer {
                let k = (o * channels + c) * inner;
                for i in k..k + inner {
                    sdy += dy[i] as f64;
                    sdyx += (dy[i] * (xv[i] - m) * s) as f64;
                }
            }
            dgamma[c] = sdyx as f32;
            dbeta[c] = sdy as f32;
        }
        if self.requires_grad(x) {
            let mut dx = vec![0.0f32; xv.len()];
            for c in 0..channels {
                let (m, s, gm) = (mean[c], inv_std[c], gv[c]);
                let (mdy, mdyx) = (dbeta[c] / count, dgamma[c] / count);
                for o in 0..outer {
                    let k = (o * channels + c) * inner;
                    for i in k..k + inner {
                        dx[i] = if batch_stats {
                            let xhat = (xv[i] - m) * s;
                            gm * s * (dy[i] - mdy - xhat * mdyx)
                        } else {
                            gm * s * dy[i]
                        };
                    }
                }
            }
            self.acc(grads, x, dx);
        }
        self.acc(grads, gamma, dgamma);
        self.acc(grads, beta, dbeta);
    }
}
