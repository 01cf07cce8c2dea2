//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::param::{ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Below this the gradient of `sqrt(var)` is treated as that of a floored
/// standard deviation.
const SIGMA_GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kernel layout of a 1-D convolution.
///
/// * `Full`: kernel `[width, c_in, c_out]`.
/// * `Depthwise`: kernel `[width, c]`, one temporal filter per channel.
/// * `Pointwise`: kernel `[1, c_in, c_out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    Full,
    Depthwise,
    Pointwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize by the statistics of the current batch.
    Training,
    /// Normalize by fixed running statistics.
    Inference { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Constant,
    Variable,
    Param,
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
        mode: ConvMode,
    },
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    SoftmaxXent {
        logits: NodeId,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Sum(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Mask {
        input: NodeId,
        mask: Vec<f64>,
    },
    ConcatLast(Vec<NodeId>),
    ConcatKeys {
        stats: NodeId,
        keys: NodeId,
    },
    BmmNt(NodeId, NodeId),
    AddBias {
        input: NodeId,
        bias: NodeId,
    },
    Cosine {
        frames: NodeId,
        keys: NodeId,
        frame_norms: Vec<f64>,
        key_norms: Vec<f64>,
    },
    Pool {
        frames: NodeId,
        scores: Option<NodeId>,
        alphas: Vec<f64>,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    Reshape(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A computation graph under construction.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, NodeId>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<ParamId, NodeId>,
}

impl Gradients {
    /// Gradient with respect to any node that required one.
    pub fn wrt(&self, node: NodeId) -> Option<Tensor> {
        let g = self.grads.get(node.0)?.as_ref()?;
        Tensor::new(self.shapes[node.0].clone(), g.clone()).ok()
    }

    /// Gradient for a parameter leaf; `None` when the parameter was unused.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        let node = self.params.get(&id)?;
        self.grads[node.0].as_deref()
    }

    /// All parameter gradients, in parameter order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|(pid, node)| self.grads[node.0].as_deref().map(|g| (*pid, g)))
    }
}

/// Splits a rank-2 `[T, C]` or rank-3 `[B, T, C]` shape into `(B, T, C)`.
fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(shape_err(op, format!("expected [T, C] or [B, T, C], got {shape:?}"))),
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Source frame of kernel tap `j` for output frame `t`, or `None` in the
/// zero padding.
#[inline]
fn tap(t: usize, j: usize, half: usize, dilation: usize, len: usize) -> Option<usize> {
    let s = (t + j * dilation).checked_sub(half * dilation)?;
    (s < len).then_some(s)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, op_name: &'static str) -> Result<NodeId> {
        value.ensure_finite(op_name)?;
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Variable | Op::Param => true,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node { op, value, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Constant | Op::Variable | Op::Param => Vec::new(),
            Op::Conv1d { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::Affine { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Activation { input, .. }
            | Op::Mask { input, .. }
            | Op::Reshape(input)
            | Op::Sum(input) => vec![*input],
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
            Op::Add(a, b) | Op::Mul(a, b) | Op::BmmNt(a, b) => vec![*a, *b],
            Op::ConcatLast(inputs) => inputs.clone(),
            Op::ConcatKeys { stats, keys } => vec![*stats, *keys],
            Op::AddBias { input, bias } => vec![*input, *bias],
            Op::Cosine { frames, keys, .. } => vec![*frames, *keys],
            Op::Pool { frames, scores, .. } => {
                let mut v = vec![*frames];
                v.extend(scores);
                v
            }
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value, "constant")
    }

    /// A leaf that receives a gradient (used for input sensitivity checks).
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Variable, value, "variable")
    }

    /// The leaf for a stored parameter. Repeated calls return the same node,
    /// so every use of a parameter accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        if let Some(node) = self.params.get(&id) {
            return Ok(*node);
        }
        let p = store.get(id);
        let node = if p.trainable {
            self.push(Op::Param, p.value.clone(), "param")?
        } else {
            self.push(Op::Constant, p.value.clone(), "param")?
        };
        self.params.insert(id, node);
        Ok(node)
    }

    /// Same-length ("same" zero padding) dilated 1-D convolution over the
    /// time axis of a `[T, C]` or `[B, T, C]` input.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
        mode: ConvMode,
    ) -> Result<NodeId> {
        const OP: &str = "conv1d";
        if dilation < 1 {
            return Err(Error::InvalidArgument(format!("conv1d dilation must be >= 1, got {dilation}")));
        }
        let x = &self.nodes[input.0].value;
        let k = &self.nodes[kernel.0].value;
        let (b, t, ci) = seq_dims(OP, x.shape())?;
        let (width, co) = match (mode, k.shape()) {
            (ConvMode::Full, &[w, i, o]) if i == ci => (w, o),
            (ConvMode::Pointwise, &[1, i, o]) if i == ci => (1, o),
            (ConvMode::Depthwise, &[w, c]) if c == ci => (w, c),
            (_, ks) => {
                return Err(shape_err(OP, format!("{mode:?} kernel {ks:?} does not fit input {:?}", x.shape())))
            }
        };
        if width % 2 == 0 {
            return Err(Error::InvalidArgument(format!("conv1d kernel width must be odd, got {width}")));
        }
        let bias_vals = match bias {
            Some(bid) => {
                let bv = &self.nodes[bid.0].value;
                if bv.shape() != [co] {
                    return Err(shape_err(OP, format!("bias {:?} for {co} output channels", bv.shape())));
                }
                Some(bv.data())
            }
            None => None,
        };
        let half = width / 2;
        let xd = x.data();
        let kd = k.data();
        let mut y = vec![0.0; b * t * co];
        for bi in 0..b {
            let xb = &xd[bi * t * ci..(bi + 1) * t * ci];
            for ti in 0..t {
                let out = &mut y[(bi * t + ti) * co..(bi * t + ti + 1) * co];
                if let Some(bv) = bias_vals {
                    out.copy_from_slice(bv);
                }
                for j in 0..width {
                    let Some(s) = tap(ti, j, half, dilation, t) else { continue };
                    let xin = &xb[s * ci..(s + 1) * ci];
                    match mode {
                        ConvMode::Depthwise => {
                            let kr = &kd[j * ci..(j + 1) * ci];
                            for ((o, &xv), &kv) in out.iter_mut().zip(xin).zip(kr) {
                                *o += xv * kv;
                            }
                        }
                        ConvMode::Full | ConvMode::Pointwise => {
                            for (i, &xv) in xin.iter().enumerate() {
                                let kr = &kd[(j * ci + i) * co..(j * ci + i + 1) * co];
                                axpy(xv, kr, out);
                            }
                        }
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = co;
        let value = Tensor::new(shape, y)?;
        self.push(Op::Conv1d { input, kernel, bias, dilation, mode }, value, OP)
    }

    /// `y = x W^T + b` over the last axis; `weight` is `[out, in]`.
    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        const OP: &str = "affine";
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let (out_dim, in_dim) = match *w.shape() {
            [o, i] => (o, i),
            ref s => return Err(shape_err(OP, format!("weight must be [out, in], got {s:?}"))),
        };
        if x.rank() == 0 || x.last_dim() != in_dim {
            return Err(shape_err(OP, format!("input {:?} vs weight {:?}", x.shape(), w.shape())));
        }
        let bias_vals = match bias {
            Some(bid) => {
                let bv = &self.nodes[bid.0].value;
                if bv.shape() != [out_dim] {
                    return Err(shape_err(OP, format!("bias {:?} for {out_dim} outputs", bv.shape())));
                }
                Some(bv.data())
            }
            None => None,
        };
        let rows = x.num_rows();
        let mut y = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let xr = x.row(r);
            let yr = &mut y[r * out_dim..(r + 1) * out_dim];
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = dot(xr, &w.data()[o * in_dim..(o + 1) * in_dim]) + bias_vals.map_or(0.0, |b| b[o]);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let value = Tensor::new(shape, y)?;
        self.push(Op::Affine { input, weight, bias }, value, OP)
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        let x = &self.nodes[input.0].value;
        let value = match kind {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(|v| v.tanh()),
        };
        self.push(Op::Activation { input, kind }, value, "activation")
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.activation(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: NodeId) -> Result<NodeId> {
        self.activation(input, Activation::Tanh)
    }

    /// Per-channel normalization over every row of a `[..., C]` input.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<NodeId> {
        const OP: &str = "batchnorm";
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("batchnorm epsilon must be positive, got {eps}")));
        }
        let x = &self.nodes[input.0].value;
        let c = x.last_dim();
        let rows = x.num_rows();
        if x.rank() == 0 || rows == 0 || c == 0 {
            return Err(Error::Empty(OP));
        }
        let g = &self.nodes[gamma.0].value;
        let be = &self.nodes[beta.0].value;
        if g.shape() != [c] || be.shape() != [c] {
            return Err(shape_err(OP, format!("gamma {:?} / beta {:?} for {c} channels", g.shape(), be.shape())));
        }
        let (mean, var, training) = match mode {
            BatchNormMode::Training => {
                let mut mean = vec![0.0; c];
                for r in 0..rows {
                    axpy(1.0, x.row(r), &mut mean);
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for r in 0..rows {
                    for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *v += (xv - m) * (xv - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var, true)
            }
            BatchNormMode::Inference { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err(OP, format!("running stats of length {} for {c} channels", mean.len())));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut normalized = vec![0.0; rows * c];
        let mut y = vec![0.0; rows * c];
        for r in 0..rows {
            let xr = x.row(r);
            for ch in 0..c {
                let n = (xr[ch] - mean[ch]) * inv_std[ch];
                normalized[r * c + ch] = n;
                y[r * c + ch] = g.data()[ch] * n + be.data()[ch];
            }
        }
        let value = Tensor::new(x.shape().to_vec(), y)?;
        let batch_stats = training.then_some((mean, var));
        self.push(
            Op::BatchNorm { input, gamma, beta, normalized, inv_std, training, batch_stats },
            value,
            OP,
        )
    }

    /// Batch mean and (biased) variance recorded by a training-mode
    /// batch-norm node.
    pub fn batch_stats(&self, node: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[node.0].op {
            Op::BatchNorm { batch_stats: Some((m, v)), .. } => Some((m, v)),
            _ => None,
        }
    }

    /// Mean softmax cross-entropy of `[B, S]` logits (or a single `[S]` row)
    /// against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        const OP: &str = "softmax_cross_entropy";
        let z = &self.nodes[logits.0].value;
        let classes = z.last_dim();
        let rows = match z.rank() {
            1 => 1,
            2 => z.shape()[0],
            _ => return Err(shape_err(OP, format!("logits must be [S] or [B, S], got {:?}", z.shape()))),
        };
        if labels.len() != rows {
            return Err(shape_err(OP, format!("{} labels for {rows} rows", labels.len())));
        }
        if rows == 0 || classes == 0 {
            return Err(Error::Empty(OP));
        }
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let zr = z.row(r);
            let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = zr.iter().map(|v| (v - max).exp()).sum();
            let log_sum = sum.ln();
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(zr) {
                *p = (v - max).exp() / sum;
            }
            loss += -(zr[label] - max - log_sum);
        }
        let value = Tensor::scalar(loss / rows as f64);
        self.push(Op::SoftmaxXent { logits, probs, labels: labels.to_vec() }, value, OP)
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.nodes[input.0].value.data().iter().sum();
        self.push(Op::Sum(input), Tensor::scalar(s), "sum")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), value, "mul")
    }

    fn zip_same(&self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !x.same_shape(y) {
            return Err(shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// Elementwise product with a constant mask (inverted dropout).
    pub fn mask(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let x = &self.nodes[input.0].value;
        if mask.len() != x.len() {
            return Err(shape_err("mask", format!("mask of {} for {} values", mask.len(), x.len())));
        }
        let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Mask { input, mask }, value, "mask")
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        const OP: &str = "concat_last";
        let first = inputs.first().ok_or(Error::Empty(OP))?;
        let lead = {
            let s = self.nodes[first.0].value.shape();
            if s.is_empty() {
                return Err(shape_err(OP, "cannot concatenate scalars".into()));
            }
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(inputs.len());
        for id in inputs {
            let s = self.nodes[id.0].value.shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err(OP, format!("leading axes {s:?} vs {lead:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (id, &w) in inputs.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[id.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(Op::ConcatLast(inputs.to_vec()), value, OP)
    }

    /// Stacks per-utterance key rows `[B, M, k]` on top of shared key rows
    /// `[N, k]`, giving `[B, M + N, k]`.
    pub fn concat_keys(&mut self, stats: NodeId, keys: NodeId) -> Result<NodeId> {
        const OP: &str = "concat_keys";
        let s = &self.nodes[stats.0].value;
        let w = &self.nodes[keys.0].value;
        let (b, m, k) = seq_dims(OP, s.shape())?;
        let (n, kw) = match *w.shape() {
            [n, kw] => (n, kw),
            ref sh => return Err(shape_err(OP, format!("shared keys must be [N, k], got {sh:?}"))),
        };
        if kw != k {
            return Err(shape_err(OP, format!("key width {k} vs shared key width {kw}")));
        }
        let mut data = Vec::with_capacity(b * (m + n) * k);
        for bi in 0..b {
            data.extend_from_slice(&s.data()[bi * m * k..(bi + 1) * m * k]);
            data.extend_from_slice(w.data());
        }
        let shape = if s.rank() == 2 { vec![m + n, k] } else { vec![b, m + n, k] };
        let value = Tensor::new(shape, data)?;
        self.push(Op::ConcatKeys { stats, keys }, value, OP)
    }

    /// Batched `A B^T`: `[B, T, k] x [B, R, k] -> [B, T, R]` (rank-2 inputs
    /// are a batch of one).
    pub fn bmm_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        const OP: &str = "bmm_nt";
        let x = &self.nodes[a.0].value;
        let y = &self.nodes[b.0].value;
        let (ba, t, k) = seq_dims(OP, x.shape())?;
        let (bb, r, k2) = seq_dims(OP, y.shape())?;
        if ba != bb || k != k2 || x.rank() != y.rank() {
            return Err(shape_err(OP, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let mut out = vec![0.0; ba * t * r];
        for bi in 0..ba {
            for ti in 0..t {
                let xr = &x.data()[(bi * t + ti) * k..(bi * t + ti + 1) * k];
                for ri in 0..r {
                    let yr = &y.data()[(bi * r + ri) * k..(bi * r + ri + 1) * k];
                    out[(bi * t + ti) * r + ri] = dot(xr, yr);
                }
            }
        }
        let shape = if x.rank() == 2 { vec![t, r] } else { vec![ba, t, r] };
        let value = Tensor::new(shape, out)?;
        self.push(Op::BmmNt(a, b), value, OP)
    }

    /// Adds a `[n]` bias to every row of a `[..., n]` input.
    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = &self.nodes[input.0].value;
        let bv = &self.nodes[bias.0].value;
        if x.rank() == 0 || bv.shape() != [x.last_dim()] {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", x.shape(), bv.shape())));
        }
        let n = x.last_dim();
        let data = x.data().iter().enumerate().map(|(i, v)| v + bv.data()[i % n]).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::AddBias { input, bias }, value, "add_bias")
    }

    /// Cosine similarity of every frame `[B, T, D]` with its utterance key
    /// `[B, D]`, giving `[B, T]` (rank-2 frames take a `[D]` key).
    pub fn cosine_scores(&mut self, frames: NodeId, keys: NodeId) -> Result<NodeId> {
        const OP: &str = "cosine_scores";
        let h = &self.nodes[frames.0].value;
        let r = &self.nodes[keys.0].value;
        let (b, t, d) = seq_dims(OP, h.shape())?;
        let key_ok = match (h.rank(), r.shape()) {
            (2, &[kd]) => kd == d,
            (3, &[kb, kd]) => kb == b && kd == d,
            _ => false,
        };
        if !key_ok {
            return Err(shape_err(OP, format!("frames {:?} vs keys {:?}", h.shape(), r.shape())));
        }
        let key_norms: Vec<f64> = (0..b).map(|bi| dot(&r.data()[bi * d..(bi + 1) * d], &r.data()[bi * d..(bi + 1) * d]).sqrt()).collect();
        let frame_norms: Vec<f64> = (0..b * t).map(|i| {
            let row = &h.data()[i * d..(i + 1) * d];
            dot(row, row).sqrt()
        }).collect();
        if key_norms.iter().chain(&frame_norms).any(|&n| n == 0.0) {
            return Err(Error::ZeroNorm(OP));
        }
        let mut e = vec![0.0; b * t];
        for bi in 0..b {
            let key = &r.data()[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let i = bi * t + ti;
                e[i] = dot(&h.data()[i * d..(i + 1) * d], key) / (frame_norms[i] * key_norms[bi]);
            }
        }
        let shape = if h.rank() == 2 { vec![t] } else { vec![b, t] };
        let value = Tensor::new(shape, e)?;
        self.push(Op::Cosine { frames, keys, frame_norms, key_norms }, value, OP)
    }

    /// Attentive statistics pooling. With scores, frame weights are the
    /// max-stabilized softmax of the scores over time; without, every frame
    /// gets `1/T`. Returns `[mean, std]` per utterance: `[B, 2D]` (or `[2D]`).
    pub fn attentive_pool(&mut self, frames: NodeId, scores: Option<NodeId>) -> Result<NodeId> {
        const OP: &str = "attentive_pool";
        let h = &self.nodes[frames.0].value;
        let (b, t, d) = seq_dims(OP, h.shape())?;
        if t == 0 {
            return Err(Error::Empty(OP));
        }
        let alphas = match scores {
            Some(sid) => {
                let e = &self.nodes[sid.0].value;
                let expected: &[usize] = if h.rank() == 2 { &[t] } else { &[b, t] };
                if e.shape() != expected {
                    return Err(shape_err(OP, format!("scores {:?} for frames {:?}", e.shape(), h.shape())));
                }
                softmax_rows(e.data(), t)
            }
            None => vec![1.0 / t as f64; b * t],
        };
        let mut mean = vec![0.0; b * d];
        let mut std = vec![0.0; b * d];
        for bi in 0..b {
            let mu = &mut mean[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let row = &h.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                axpy(alphas[bi * t + ti], row, mu);
            }
            let sd = &mut std[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let a = alphas[bi * t + ti];
                let row = &h.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for ((s, &x), &m) in sd.iter_mut().zip(row).zip(mu.iter()) {
                    *s += a * (x - m) * (x - m);
                }
            }
            sd.iter_mut().for_each(|s| *s = s.max(0.0).sqrt());
        }
        let mut out = Vec::with_capacity(b * 2 * d);
        for bi in 0..b {
            out.extend_from_slice(&mean[bi * d..(bi + 1) * d]);
            out.extend_from_slice(&std[bi * d..(bi + 1) * d]);
        }
        let shape = if h.rank() == 2 { vec![2 * d] } else { vec![b, 2 * d] };
        let value = Tensor::new(shape, out)?;
        self.push(Op::Pool { frames, scores, alphas, mean, std }, value, OP)
    }

    /// Frame weights used by a pooling node, `B * T` values.
    pub fn pooling_weights(&self, node: NodeId) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::Pool { alphas, .. } => Some(alphas),
            _ => None,
        }
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[input.0].value.clone().reshape(shape)?;
        self.push(Op::Reshape(input), value, "reshape")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.rank() != 0 {
            return Err(shape_err("backward", format!("root must be a scalar, got {:?}", root_value.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }

    /// Gradient buffer of `id`, created on first use; `None` when the node
    /// does not require a gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn propagate(&self, id: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::Conv1d { input, kernel, bias, dilation, mode } => {
                self.conv_backward(*input, *kernel, *bias, *dilation, *mode, gy, grads)
            }
            Op::Affine { input, weight, bias } => {
                let x = &self.nodes[input.0].value;
                let w = &self.nodes[weight.0].value;
                let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
                let rows = x.num_rows();
                if let Some(gx) = self.slot(grads, *input) {
                    for r in 0..rows {
                        let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            axpy(gy[r * out_dim + o], &w.data()[o * in_dim..(o + 1) * in_dim], gxr);
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *weight) {
                    for r in 0..rows {
                        let xr = x.row(r);
                        for o in 0..out_dim {
                            axpy(gy[r * out_dim + o], xr, &mut gw[o * in_dim..(o + 1) * in_dim]);
                        }
                    }
                }
                if let Some(gb) = bias.and_then(|b| self.slot(grads, b)) {
                    for r in 0..rows {
                        axpy(1.0, &gy[r * out_dim..(r + 1) * out_dim], gb);
                    }
                }
            }
            Op::Activation { input, kind } => {
                let y = node.value.data();
                let x = self.nodes[input.0].value.data();
                if let Some(gx) = self.slot(grads, *input) {
                    match kind {
                        Activation::Relu => {
                            for ((g, &xv), &d) in gx.iter_mut().zip(x).zip(gy) {
                                if xv > 0.0 {
                                    *g += d;
                                }
                            }
                        }
                        Activation::Tanh => {
                            for ((g, &yv), &d) in gx.iter_mut().zip(y).zip(gy) {
                                *g += d * (1.0 - yv * yv);
                            }
                        }
                    }
                }
            }
            Op::BatchNorm { input, gamma, beta, normalized, inv_std, training, .. } => {
                let c = inv_std.len();
                let rows = normalized.len() / c;
                let g = self.nodes[gamma.0].value.data();
                let mut sum_gy = vec![0.0; c];
                let mut sum_gy_xhat = vec![0.0; c];
                for r in 0..rows {
                    for ch in 0..c {
                        let d = gy[r * c + ch];
                        sum_gy[ch] += d;
                        sum_gy_xhat[ch] += d * normalized[r * c + ch];
                    }
                }
                if let Some(gx) = self.slot(grads, *input) {
                    let n = rows as f64;
                    for r in 0..rows {
                        for ch in 0..c {
                            let d = gy[r * c + ch];
                            let scale = g[ch] * inv_std[ch];
                            gx[r * c + ch] += if *training {
                                scale * (d - sum_gy[ch] / n - normalized[r * c + ch] * sum_gy_xhat[ch] / n)
                            } else {
                                scale * d
                            };
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    axpy(1.0, &sum_gy_xhat, gg);
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    axpy(1.0, &sum_gy, gb);
                }
            }
            Op::SoftmaxXent { logits, probs, labels } => {
                if let Some(gz) = self.slot(grads, *logits) {
                    let classes = probs.len() / labels.len();
                    let scale = gy[0] / labels.len() as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        for k in 0..classes {
                            let target = if k == label { 1.0 } else { 0.0 };
                            gz[r * classes + k] += scale * (probs[r * classes + k] - target);
                        }
                    }
                }
            }
            Op::Sum(input) => {
                if let Some(gx) = self.slot(grads, *input) {
                    gx.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if let Some(gp) = self.slot(grads, p) {
                        axpy(1.0, gy, gp);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &o) in ga.iter_mut().zip(gy).zip(bv) {
                        *g += d * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((g, &d), &o) in gb.iter_mut().zip(gy).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Mask { input, mask } => {
                if let Some(gx) = self.slot(grads, *input) {
                    for ((g, &d), &m) in gx.iter_mut().zip(gy).zip(mask) {
                        *g += d * m;
                    }
                }
            }
            Op::ConcatLast(inputs) => {
                let widths: Vec<usize> = inputs.iter().map(|i| self.nodes[i.0].value.last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = node.value.len() / total.max(1);
                let mut offset = 0;
                for (inp, &w) in inputs.iter().zip(&widths) {
                    if let Some(gx) = self.slot(grads, *inp) {
                        for r in 0..rows {
                            axpy(1.0, &gy[r * total + offset..r * total + offset + w], &mut gx[r * w..(r + 1) * w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatKeys { stats, keys } => {
                let s = &self.nodes[stats.0].value;
                let (b, m, k) = seq_dims("concat_keys", s.shape()).expect("validated in forward");
                let n = self.nodes[keys.0].value.shape()[0];
                if let Some(gs) = self.slot(grads, *stats) {
                    for bi in 0..b {
                        axpy(1.0, &gy[bi * (m + n) * k..(bi * (m + n) + m) * k], &mut gs[bi * m * k..(bi + 1) * m * k]);
                    }
                }
                if let Some(gk) = self.slot(grads, *keys) {
                    for bi in 0..b {
                        axpy(1.0, &gy[(bi * (m + n) + m) * k..(bi + 1) * (m + n) * k], gk);
                    }
                }
            }
            Op::BmmNt(a, b) => {
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[b.0].value;
                let (bs, t, k) = seq_dims("bmm_nt", x.shape()).expect("validated in forward");
                let r = y.num_rows() / bs;
                if let Some(ga) = self.slot(grads, *a) {
                    for bi in 0..bs {
                        for ti in 0..t {
                            let gar = &mut ga[(bi * t + ti) * k..(bi * t + ti + 1) * k];
                            for ri in 0..r {
                                axpy(gy[(bi * t + ti) * r + ri], &y.data()[(bi * r + ri) * k..(bi * r + ri + 1) * k], gar);
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for bi in 0..bs {
                        for ti in 0..t {
                            let xr = &x.data()[(bi * t + ti) * k..(bi * t + ti + 1) * k];
                            for ri in 0..r {
                                axpy(gy[(bi * t + ti) * r + ri], xr, &mut gb[(bi * r + ri) * k..(bi * r + ri + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::AddBias { input, bias } => {
                if let Some(gx) = self.slot(grads, *input) {
                    axpy(1.0, gy, gx);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let n = gb.len();
                    for (i, &d) in gy.iter().enumerate() {
                        gb[i % n] += d;
                    }
                }
            }
            Op::Cosine { frames, keys, frame_norms, key_norms } => {
                let h = &self.nodes[frames.0].value;
                let r = &self.nodes[keys.0].value;
                let (b, t, d) = seq_dims("cosine_scores", h.shape()).expect("validated in forward");
                let e = node.value.data();
                if let Some(gh) = self.slot(grads, *frames) {
                    for bi in 0..b {
                        let key = &r.data()[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let i = bi * t + ti;
                            let row = &h.data()[i * d..(i + 1) * d];
                            let gr = &mut gh[i * d..(i + 1) * d];
                            let a = gy[i] / (frame_norms[i] * key_norms[bi]);
                            let c = gy[i] * e[i] / (frame_norms[i] * frame_norms[i]);
                            for ((g, &kv), &hv) in gr.iter_mut().zip(key).zip(row) {
                                *g += a * kv - c * hv;
                            }
                        }
                    }
                }
                if let Some(gk) = self.slot(grads, *keys) {
                    for bi in 0..b {
                        let key = &r.data()[bi * d..(bi + 1) * d];
                        let gr = &mut gk[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let i = bi * t + ti;
                            let row = &h.data()[i * d..(i + 1) * d];
                            let a = gy[i] / (frame_norms[i] * key_norms[bi]);
                            let c = gy[i] * e[i] / (key_norms[bi] * key_norms[bi]);
                            for ((g, &kv), &hv) in gr.iter_mut().zip(key).zip(row) {
                                *g += a * hv - c * kv;
                            }
                        }
                    }
                }
            }
            Op::Pool { frames, scores, alphas, mean, std } => {
                self.pool_backward(*frames, *scores, alphas, mean, std, gy, grads)
            }
            Op::Reshape(input) => {
                if let Some(gx) = self.slot(grads, *input) {
                    axpy(1.0, gy, gx);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
        mode: ConvMode,
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let x = &self.nodes[input.0].value;
        let k = &self.nodes[kernel.0].value;
        let (b, t, ci) = seq_dims("conv1d", x.shape()).expect("validated in forward");
        let width = k.shape()[0];
        let co = if mode == ConvMode::Depthwise { ci } else { k.shape()[2] };
        let half = width / 2;
        let (xd, kd) = (x.data(), k.data());
        if let Some(gx) = self.slot(grads, input) {
            for bi in 0..b {
                for ti in 0..t {
                    let g = &gy[(bi * t + ti) * co..(bi * t + ti + 1) * co];
                    for j in 0..width {
                        let Some(s) = tap(ti, j, half, dilation, t) else { continue };
                        let gxr = &mut gx[(bi * t + s) * ci..(bi * t + s + 1) * ci];
                        match mode {
                            ConvMode::Depthwise => {
                                let kr = &kd[j * ci..(j + 1) * ci];
                                for ((o, &gv), &kv) in gxr.iter_mut().zip(g).zip(kr) {
                                    *o += gv * kv;
                                }
                            }
                            ConvMode::Full | ConvMode::Pointwise => {
                                for (i, o) in gxr.iter_mut().enumerate() {
                                    *o += dot(&kd[(j * ci + i) * co..(j * ci + i + 1) * co], g);
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(gk) = self.slot(grads, kernel) {
            for bi in 0..b {
                for ti in 0..t {
                    let g = &gy[(bi * t + ti) * co..(bi * t + ti + 1) * co];
                    for j in 0..width {
                        let Some(s) = tap(ti, j, half, dilation, t) else { continue };
                        let xin = &xd[(bi * t + s) * ci..(bi * t + s + 1) * ci];
                        match mode {
                            ConvMode::Depthwise => {
                                for ((o, &gv), &xv) in gk[j * ci..(j + 1) * ci].iter_mut().zip(g).zip(xin) {
                                    *o += gv * xv;
                                }
                            }
                            ConvMode::Full | ConvMode::Pointwise => {
                                for (i, &xv) in xin.iter().enumerate() {
                                    axpy(xv, g, &mut gk[(j * ci + i) * co..(j * ci + i + 1) * co]);
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(gb) = bias.and_then(|bid| self.slot(grads, bid)) {
            for row in gy.chunks_exact(co) {
                axpy(1.0, row, gb);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn pool_backward(
        &self,
        frames: NodeId,
        scores: Option<NodeId>,
        alphas: &[f64],
        mean: &[f64],
        std: &[f64],
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let h = &self.nodes[frames.0].value;
        let (b, t, d) = seq_dims("attentive_pool", h.shape()).expect("validated in forward");
        // d(out)/d(var) through sigma = sqrt(var)
        let mut g_var = vec![0.0; b * d];
        for bi in 0..b {
            for k in 0..d {
                let s = std[bi * d + k];
                if s > 0.0 {
                    g_var[bi * d + k] = gy[bi * 2 * d + d + k] / (2.0 * s.max(SIGMA_GRAD_FLOOR));
                }
            }
        }
        if let Some(gh) = self.slot(grads, frames) {
            for bi in 0..b {
                let g_mu = &gy[bi * 2 * d..bi * 2 * d + d];
                for ti in 0..t {
                    let a = alphas[bi * t + ti];
                    let i = bi * t + ti;
                    let row = &h.data()[i * d..(i + 1) * d];
                    let gr = &mut gh[i * d..(i + 1) * d];
                    for k in 0..d {
                        gr[k] += a * g_mu[k] + 2.0 * a * g_var[bi * d + k] * (row[k] - mean[bi * d + k]);
                    }
                }
            }
        }
        if let Some(ge) = scores.and_then(|s| self.slot(grads, s)) {
            for bi in 0..b {
                let g_mu = &gy[bi * 2 * d..bi * 2 * d + d];
                let mut g_alpha = vec![0.0; t];
                for (ti, ga) in g_alpha.iter_mut().enumerate() {
                    let i = bi * t + ti;
                    let row = &h.data()[i * d..(i + 1) * d];
                    *ga = (0..d)
                        .map(|k| {
                            let c = row[k] - mean[bi * d + k];
                            g_mu[k] * row[k] + g_var[bi * d + k] * c * c
                        })
                        .sum();
                }
                let a = &alphas[bi * t..(bi + 1) * t];
                let weighted: f64 = dot(a, &g_alpha);
                for ti in 0..t {
                    ge[bi * t + ti] += a[ti] * (g_alpha[ti] - weighted);
                }
            }
        }
    }
}

/// Max-stabilized softmax over consecutive groups of `t` values.
pub(crate) fn softmax_rows(e: &[f64], t: usize) -> Vec<f64> {
    let mut out = vec![0.0; e.len()];
    for (src, dst) in e.chunks_exact(t).zip(out.chunks_exact_mut(t)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - max).exp();
            sum += *o;
        }
        let inv = 1.0 / sum;
        dst.iter_mut().for_each(|o| *o *= inv);
    }
    out
}
