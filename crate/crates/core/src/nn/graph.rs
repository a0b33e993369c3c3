//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Parameters enter the tape once per graph; repeated
//! uses share a node and their gradients accumulate.

use std::collections::HashMap;

use super::conv::{self, ConvGeom};
use super::norm::{self, BN_EPS};
use super::params::{ParamId, ParamSet};
use super::{pool, resize};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Tensor,
        inv_std: Vec<f32>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Relu(Var),
    LeakyRelu(Var, f32),
    Add(Var, Var),
    Concat(Vec<Var>),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool(Var),
    Resize(Var),
    Softmax(Var),
    Loss(Vec<(Var, Tensor)>),
    WeightedSum(Vec<(Var, f32)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<(u32, usize)>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<(u32, usize), Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A non-parameter leaf whose gradient is reported by [`Gradients::of`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a parameter. `trainable = false` treats it as a constant for
    /// this graph while still letting gradients flow through it to other inputs.
    pub fn param(&mut self, set: &ParamSet, id: ParamId, trainable: bool) -> Var {
        let key = (set.tag(), id.index());
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(set.get(id).clone(), Op::Leaf, trainable);
        self.nodes[v.0].param = Some(key);
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(out, Op::Conv { x, w, b, geom }, ng)
    }

    /// Batch-statistics normalization. Returns the output plus the batch mean
    /// and unbiased variance for updating running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> (Var, Vec<f32>, Vec<f32>) {
        let out = norm::batch_norm_train(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            out.y,
            Op::BnTrain {
                x,
                gamma,
                beta,
                x_hat: out.x_hat,
                inv_std: out.inv_std,
            },
            ng,
        );
        (v, out.batch_mean, out.batch_var)
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f32],
        running_var: &[f32],
    ) -> Var {
        let out = norm::batch_norm_eval(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
        );
        let inv_std = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::BnEval {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
            },
            ng,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(out, Op::LeakyRelu(x, slope), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape mismatch");
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Channel-axis concatenation of NCHW tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let hw = h * w;
        let chans: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pn, pc, ph, pw) = self.value(p).dims4();
                assert!(pn == n && ph == h && pw == w, "concat spatial mismatch");
                pc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut out = Vec::with_capacity(n * total * hw);
        for i in 0..n {
            for (&p, &c) in parts.iter().zip(&chans) {
                let d = self.value(p).data();
                out.extend_from_slice(&d[i * c * hw..(i + 1) * c * hw]);
            }
        }
        let out = Tensor::from_vec(&[n, total, h, w], out).expect("concat shape");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Var {
        let (out, argmax) = pool::max_pool_forward(self.value(x), kernel, stride, padding);
        let ng = self.needs(x);
        self.push(out, Op::MaxPool { x, argmax }, ng)
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, bins: usize) -> Var {
        let out = pool::adaptive_avg_pool_forward(self.value(x), bins);
        let ng = self.needs(x);
        self.push(out, Op::AvgPool(x), ng)
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let out = resize::bilinear_forward(self.value(x), out_h, out_w);
        let ng = self.needs(x);
        self.push(out, Op::Resize(x), ng)
    }

    /// Softmax over the channel axis at every pixel.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_channels(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// A scalar whose gradients with respect to `inputs` were computed
    /// analytically by the caller.
    pub fn loss(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.value(*v).shape(), g.shape(), "loss gradient shape");
        }
        let ng = inputs.iter().any(|(v, _)| self.needs(*v));
        self.push(Tensor::scalar(value as f32), Op::Loss(inputs), ng)
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Var {
        let value: f32 = terms.iter().map(|&(v, k)| k * self.value(v).data()[0]).sum();
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(Tensor::scalar(value), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut leaves = HashMap::new();
        let mut params = HashMap::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let emit = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    match node.param {
                        Some(key) => params.insert(key, g),
                        None => leaves.insert(i, g),
                    };
                }
                Op::Conv { x, w, b, geom } => {
                    let r = conv::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        geom,
                        self.needs(*x),
                        self.needs(*w),
                        b.is_some_and(|b| self.needs(b)),
                    );
                    if let Some(dx) = r.dx {
                        emit(*x, dx, &mut grads);
                    }
                    if let Some(dw) = r.dw {
                        emit(*w, dw, &mut grads);
                    }
                    if let (Some(b), Some(db)) = (b, r.db) {
                        emit(*b, db, &mut grads);
                    }
                }
                Op::BnTrain {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let r = norm::batch_norm_train_backward(
                        &g,
                        x_hat,
                        inv_std,
                        self.value(*gamma).data(),
                    );
                    let c = r.dgamma.len();
                    emit(*x, r.dx, &mut grads);
                    emit(*gamma, Tensor::from_vec(&[c], r.dgamma).unwrap(), &mut grads);
                    emit(*beta, Tensor::from_vec(&[c], r.dbeta).unwrap(), &mut grads);
                }
                Op::BnEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let (n, c, h, w) = g.dims4();
                    let hw = h * w;
                    let gam = self.value(*gamma).data();
                    let xd = self.value(*x).data();
                    let mut dx = Tensor::zeros(g.shape());
                    let mut dgamma = vec![0.0f32; c];
                    let mut dbeta = vec![0.0f32; c];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            for j in base..base + hw {
                                let gv = g.data()[j];
                                dx.data_mut()[j] = gv * gam[ch] * inv_std[ch];
                                dgamma[ch] += gv * (xd[j] - mean[ch]) * inv_std[ch];
                                dbeta[ch] += gv;
                            }
                        }
                    }
                    emit(*x, dx, &mut grads);
                    emit(*gamma, Tensor::from_vec(&[c], dgamma).unwrap(), &mut grads);
                    emit(*beta, Tensor::from_vec(&[c], dbeta).unwrap(), &mut grads);
                }
                Op::Relu(x) => {
                    let xd = self.value(*x).data();
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xd) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    emit(*x, dx, &mut grads);
                }
                Op::LeakyRelu(x, slope) => {
                    let xd = self.value(*x).data();
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xd) {
                        if v <= 0.0 {
                            *d *= slope;
                        }
                    }
                    emit(*x, dx, &mut grads);
                }
                Op::Add(a, b) => {
                    emit(*b, g.clone(), &mut grads);
                    emit(*a, g, &mut grads);
                }
                Op::Concat(parts) => {
                    let (n, total, h, w) = g.dims4();
                    let hw = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        if self.needs(p) {
                            let mut part = Vec::with_capacity(n * c * hw);
                            for s in 0..n {
                                let start = (s * total + offset) * hw;
                                part.extend_from_slice(&g.data()[start..start + c * hw]);
                            }
                            emit(p, Tensor::from_vec(&[n, c, h, w], part).unwrap(), &mut grads);
                        }
                        offset += c;
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let dx = pool::max_pool_backward(&g, argmax, self.value(*x).shape());
                    emit(*x, dx, &mut grads);
                }
                Op::AvgPool(x) => {
                    let dx = pool::adaptive_avg_pool_backward(&g, self.value(*x).shape());
                    emit(*x, dx, &mut grads);
                }
                Op::Resize(x) => {
                    let dx = resize::bilinear_backward(&g, self.value(*x).shape());
                    emit(*x, dx, &mut grads);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let (n, c, h, w) = y.dims4();
                    let hw = h * w;
                    let mut dx = Tensor::zeros(y.shape());
                    for s in 0..n {
                        for p in 0..hw {
                            let idx = |ch: usize| (s * c + ch) * hw + p;
                            let dot: f32 = (0..c).map(|ch| y.data()[idx(ch)] * g.data()[idx(ch)]).sum();
                            for ch in 0..c {
                                dx.data_mut()[idx(ch)] = y.data()[idx(ch)] * (g.data()[idx(ch)] - dot);
                            }
                        }
                    }
                    emit(*x, dx, &mut grads);
                }
                Op::Loss(inputs) => {
                    let k = g.data()[0];
                    for (v, d) in inputs {
                        let mut t = d.clone();
                        t.scale(k);
                        emit(*v, t, &mut grads);
                    }
                }
                Op::WeightedSum(terms) => {
                    let k = g.data()[0];
                    for &(v, w) in terms {
                        emit(v, Tensor::scalar(k * w), &mut grads);
                    }
                }
            }
        }
        Gradients { leaves, params }
    }
}

pub fn softmax_channels(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let od = out.data_mut();
    for s in 0..n {
        for p in 0..hw {
            let idx = |ch: usize| (s * c + ch) * hw + p;
            let m = (0..c).map(|ch| xd[idx(ch)]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for ch in 0..c {
                let e = (xd[idx(ch)] - m).exp();
                od[idx(ch)] = e;
                z += e;
            }
            for ch in 0..c {
                od[idx(ch)] /= z;
            }
        }
    }
    out
}

pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<(u32, usize), Tensor>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::input`].
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    /// Gradients for every entry of `set`, `None` where no gradient reached it.
    pub fn for_set(&self, set: &ParamSet) -> Vec<Option<Tensor>> {
        (0..set.len())
            .map(|i| self.params.get(&(set.tag(), i)).cloned())
            .collect()
    }

    pub fn take_for_set(&mut self, set: &ParamSet) -> Vec<Option<Tensor>> {
        (0..set.len())
            .map(|i| self.params.remove(&(set.tag(), i)))
            .collect()
    }
}
