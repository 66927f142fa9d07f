//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records every operation as
//! a node, and [`Graph::backward`] walks the tape in reverse. One graph is
//! built per forward pass; per-sample graphs can be built concurrently against
//! the same store.
//!
//! Layout conventions: token matrices are `[rows, features]`, image tensors
//! are `[N, C, H, W]`, linear weights are `[out, in]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, MatMut, MatRef, Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored but not optimized.
    pub trainable: bool,
}

/// Named parameter tensors of one model, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(move |id| self.get_mut(id))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Exponential moving average update of batch-norm running statistics.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: T) {
        for u in updates {
            for (id, batch) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
                let running = self.get_mut(id).data_mut();
                for (r, &b) in running.iter_mut().zip(batch) {
                    *r = (T::one() - momentum) * *r + momentum * b;
                }
            }
        }
    }
}

/// Batch statistics observed by a training-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Per-parameter gradients, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn empty(n: usize) -> Self {
        Self { slots: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn set(&mut self, id: ParamId, g: Tensor<T>) {
        self.slots[id.0] = Some(g);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn accumulate(&mut self, other: &Grads<T>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.slots.iter_mut().flatten() {
            g.scale(s);
        }
    }

    pub fn global_norm(&self) -> T {
        self.slots.iter().flatten().map(|g| g.sum_sq()).sum::<T>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.all_finite())
    }

    /// Drops the gradients of parameters for which `keep` is false.
    pub fn retain(&mut self, keep: impl Fn(ParamId) -> bool) {
        for (i, g) in self.slots.iter_mut().enumerate() {
            if !keep(ParamId(i)) {
                *g = None;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.slots.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, T),
    ConcatRows(Vec<Var>),
    SelectRow(Var, usize),
    Reshape(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Relu(Var),
    Dropout(Var, Vec<T>),
    Attention { qkv: Var, heads: usize, probs: Vec<T> },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    AdaptiveAvgPool { x: Var, out_h: usize, out_w: usize },
    ConcatChannels(Vec<Var>),
    CrossEntropy { logits: Var, target: usize, weight: T, probs: Vec<T> },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass recorded for differentiation.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate<T>>,
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected [N, C, H, W], got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected a matrix, got {shape:?}");
    (shape[0], shape[1])
}

/// Bin `[start, end)` of adaptive pooling for output cell `i` of `out` over `len` inputs.
pub fn adaptive_bin(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = (i * len) / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu<T: Real>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let l = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *o = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    dx: &mut [T],
) {
    let l = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[ci * h * w + iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output spatial size of a convolution or pooling window.
pub fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_vars: HashMap::new(), bn_updates: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// A constant input. With `requires_grad` its gradient is retained by `backward`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `x · wᵀ + b` with `x: [m, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (m, fan_in) = dims2(self.value(x).shape());
        let (out, w_in) = dims2(self.value(w).shape());
        assert_eq!(fan_in, w_in, "linear: input width {fan_in} vs weight {w_in}");
        let mut y = vec![T::zero(); m * out];
        gemm(
            T::one(),
            MatRef::dense(self.value(x).data(), m, fan_in),
            MatRef::dense(self.value(w).data(), out, fan_in).t(),
            T::zero(),
            MatMut::dense(&mut y, m, out),
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), out, "linear bias");
            for row in y.chunks_mut(out) {
                for (v, &bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                }
            }
        }
        let t = Tensor::from_vec(&[m, out], y).expect("linear output");
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(t, Op::Linear { x, w, b }, &parents)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shapes");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Stacks `[r_i, d]` matrices vertically.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let d = dims2(self.value(xs[0]).shape()).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (r, dd) = dims2(self.value(x).shape());
            assert_eq!(dd, d, "concat_rows width");
            rows += r;
            data.extend_from_slice(self.value(x).data());
        }
        let t = Tensor::from_vec(&[rows, d], data).expect("concat_rows");
        self.push(t, Op::ConcatRows(xs.to_vec()), xs)
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Var {
        let (_, d) = dims2(self.value(x).shape());
        let data = self.value(x).data()[row * d..(row + 1) * d].to_vec();
        let t = Tensor::from_vec(&[1, d], data).expect("select_row");
        self.push(t, Op::SelectRow(x, row), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape).expect("reshape");
        self.push(t, Op::Reshape(x), &[x])
    }

    /// Row-wise layer normalization with affine parameters of length `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, d) = dims2(self.value(x).shape());
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); m * d];
        let mut rstd = vec![T::zero(); m];
        let mut y = vec![T::zero(); m * d];
        for r in 0..m {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                y[r * d + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::from_vec(&[m, d], y).expect("layer_norm");
        self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        self.push(t, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        self.push(t, Op::Relu(x), &[x])
    }

    /// Inverted dropout; `keep_mask` holds `0` or `1/(1-p)` per element.
    pub fn dropout(&mut self, x: Var, keep_mask: Vec<T>) -> Var {
        let src = self.value(x);
        assert_eq!(src.numel(), keep_mask.len(), "dropout mask");
        let data = src.data().iter().zip(&keep_mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::from_vec(src.shape(), data).expect("dropout");
        self.push(t, Op::Dropout(x, keep_mask), &[x])
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `[tokens, 3·d]` holding the query, key and value projections
    /// side by side; the result is `[tokens, d]` with heads concatenated.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let (t, d3) = dims2(self.value(qkv).shape());
        assert_eq!(d3 % 3, 0, "attention input width");
        let d = d3 / 3;
        assert_eq!(d % heads, 0, "embedding not divisible by heads");
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let src = self.value(qkv).data();
        let mut probs = vec![T::zero(); heads * t * t];
        let mut out = vec![T::zero(); t * d];
        for h in 0..heads {
            let p = &mut probs[h * t * t..(h + 1) * t * t];
            let q = MatRef::new(src, h * dh, t, dh, d3, 1);
            let k = MatRef::new(src, d + h * dh, t, dh, d3, 1);
            let v = MatRef::new(src, 2 * d + h * dh, t, dh, d3, 1);
            gemm(scale, q, k.t(), T::zero(), MatMut::dense(p, t, t));
            for row in p.chunks_mut(t) {
                softmax_in_place(row);
            }
            gemm(T::one(), MatRef::dense(p, t, t), v, T::zero(), MatMut::new(&mut out, h * dh, t, dh, d, 1));
        }
        let tensor = Tensor::from_vec(&[t, d], out).expect("attention");
        self.push(tensor, Op::Attention { qkv, heads, probs }, &[qkv])
    }

    /// Attention probabilities `[heads, tokens, tokens]` recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// 2-D convolution without bias; `x: [N, C, H, W]`, `w: [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = dims4(self.value(x).shape());
        let (o, wc, kh, kw) = dims4(self.value(w).shape());
        assert_eq!(c, wc, "conv2d channels: input {c}, weight {wc}");
        let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad));
        let (ck, l) = (c * kh * kw, ho * wo);
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![T::zero(); n * o * l];
        let mut cols = vec![T::zero(); ck * l];
        for s in 0..n {
            im2col(&xs[s * c * h * wd..(s + 1) * c * h * wd], (c, h, wd), (kh, kw), stride, pad, (ho, wo), &mut cols);
            gemm(
                T::one(),
                MatRef::dense(ws, o, ck),
                MatRef::dense(&cols, ck, l),
                T::zero(),
                MatMut::dense(&mut out[s * o * l..(s + 1) * o * l], o, l),
            );
        }
        let t = Tensor::from_vec(&[n, o, ho, wo], out).expect("conv2d");
        self.push(t, Op::Conv2d { x, w, stride, pad }, &[x, w])
    }

    /// Batch normalization over `(N, H, W)` per channel.
    ///
    /// With `running = Some((mean_id, var_id))` and `training = true` the batch
    /// statistics are used and recorded for a later running-average update;
    /// with `training = false` the stored running statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (ParamId, ParamId),
        training: bool,
    ) -> Var {
        let (n, c, h, w) = dims4(self.value(x).shape());
        let hw = h * w;
        let count = n * hw;
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let eps = T::of(BATCH_NORM_EPS);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if training {
            let cn = T::of(count as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    s += xs[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied().sum::<T>();
                }
                let m = s / cn;
                let mut v = T::zero();
                for i in 0..n {
                    for &val in &xs[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                        v += (val - m) * (val - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / cn;
            }
        } else {
            mean.copy_from_slice(self.params.get(running.0).data());
            var.copy_from_slice(self.params.get(running.1).data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for k in base..base + hw {
                    let xh = (xs[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = xh;
                    y[k] = xh * g[ch] + b[ch];
                }
            }
        }
        if training {
            let unbias = if count > 1 { T::of(count as f64 / (count - 1) as f64) } else { T::one() };
            self.bn_updates.push(BnUpdate {
                mean_id: running.0,
                var_id: running.1,
                mean,
                var: var.iter().map(|&v| v * unbias).collect(),
            });
        }
        let t = Tensor::from_vec(&[n, c, h, w], y).expect("batch_norm");
        self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats: training }, &[x, gamma, beta])
    }

    /// Running-statistic updates collected from training-mode batch-norm nodes.
    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    /// Max pooling; padded cells never win.
    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let (n, c, h, w) = dims4(self.value(x).shape());
        let (ho, wo) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad));
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = base;
                    for ki in 0..k {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, ho, wo], out).expect("max_pool");
        self.push(t, Op::MaxPool { x, argmax }, &[x])
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (n, c, h, w) = dims4(self.value(x).shape());
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                let (y0, y1) = adaptive_bin(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_bin(ox, out_w, w);
                    let mut s = T::zero();
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            s += xs[base + iy * w + ix];
                        }
                    }
                    out[plane * out_h * out_w + oy * out_w + ox] = s / T::of(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, out_h, out_w], out).expect("adaptive_avg_pool");
        self.push(t, Op::AdaptiveAvgPool { x, out_h, out_w }, &[x])
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let (n, _, h, w) = dims4(self.value(xs[0]).shape());
        let mut total = 0;
        for &x in xs {
            let (nn, c, hh, ww) = dims4(self.value(x).shape());
            assert_eq!((nn, hh, ww), (n, h, w), "concat_channels geometry");
            total += c;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for &x in xs {
                let c = self.value(x).shape()[1];
                out.extend_from_slice(&self.value(x).data()[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let t = Tensor::from_vec(&[n, total, h, w], out).expect("concat_channels");
        self.push(t, Op::ConcatChannels(xs.to_vec()), xs)
    }

    /// Weighted cross-entropy of a single logit vector against `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize, weight: T) -> Var {
        let z = self.value(logits).data();
        assert!(target < z.len(), "cross_entropy target out of range");
        let mut probs = z.to_vec();
        softmax_in_place(&mut probs);
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        let loss = weight * (lse - z[target]);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, weight, probs }, &[logits])
    }

    /// Reverse pass from `root` seeded with `seed` (same shape as the root value).
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.value(root).shape(), "seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Convenience: backward from a scalar loss with seed 1.
    pub fn backward_scalar(&self, loss: Var) -> Gradients<T> {
        self.backward(loss, Tensor::scalar(T::one()))
    }

    /// Collects the gradients that reached parameter leaves.
    pub fn param_grads(&self, g: &Gradients<T>) -> Grads<T> {
        let mut out = Grads::empty(self.params.len());
        for (&id, &v) in &self.param_vars {
            if let Some(t) = g.get(v) {
                out.set(id, t.clone());
            }
        }
        out
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let send = |v: Var, t: Tensor<T>, grads: &mut [Option<Tensor<T>>]| match grads[v.0].as_mut() {
            Some(acc) => acc.add_assign(&t),
            None => grads[v.0] = Some(t),
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (m, fan_in) = dims2(xv.shape());
                let out = wv.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); m * fan_in];
                    gemm(
                        T::one(),
                        MatRef::dense(gd, m, out),
                        MatRef::dense(wv.data(), out, fan_in),
                        T::zero(),
                        MatMut::dense(&mut dx, m, fan_in),
                    );
                    send(*x, Tensor::from_vec(xv.shape(), dx).unwrap(), grads);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); out * fan_in];
                    gemm(
                        T::one(),
                        MatRef::dense(gd, m, out).t(),
                        MatRef::dense(xv.data(), m, fan_in),
                        T::zero(),
                        MatMut::dense(&mut dw, out, fan_in),
                    );
                    send(*w, Tensor::from_vec(wv.shape(), dw).unwrap(), grads);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); out];
                    for row in gd.chunks(out) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    send(*b, Tensor::from_vec(&[out], db).unwrap(), grads);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    send(*a, g.clone(), grads);
                }
                if self.wants(*b) {
                    send(*b, g.clone(), grads);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                send(*x, g.map(|v| v * s), grads);
            }
            Op::ConcatRows(xs) => {
                let d = g.shape()[1];
                let mut row = 0;
                for &x in xs {
                    let r = self.value(x).shape()[0];
                    if self.wants(x) {
                        let part = gd[row * d..(row + r) * d].to_vec();
                        send(x, Tensor::from_vec(&[r, d], part).unwrap(), grads);
                    }
                    row += r;
                }
            }
            Op::SelectRow(x, row) => {
                let shape = self.value(*x).shape().to_vec();
                let d = shape[1];
                let mut dx = Tensor::zeros(&shape);
                dx.data_mut()[row * d..(row + 1) * d].copy_from_slice(gd);
                send(*x, dx, grads);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                send(*x, g.clone().reshape(&shape).unwrap(), grads);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (m, d) = dims2(self.value(*x).shape());
                let gam = self.value(*gamma).data();
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                let mut dx = vec![T::zero(); m * d];
                let dn = T::of(d as f64);
                for r in 0..m {
                    let dy = &gd[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..d {
                        dg[j] += dy[j] * xh[j];
                        db[j] += dy[j];
                        let dxh = dy[j] * gam[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= dn;
                    mean_dxh_xh /= dn;
                    for j in 0..d {
                        let dxh = dy[j] * gam[j];
                        dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                if self.wants(*x) {
                    send(*x, Tensor::from_vec(&[m, d], dx).unwrap(), grads);
                }
                send(*gamma, Tensor::from_vec(&[d], dg).unwrap(), grads);
                send(*beta, Tensor::from_vec(&[d], db).unwrap(), grads);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let data = xv.data().iter().zip(gd).map(|(&a, &d)| d * gelu_grad(a)).collect();
                send(*x, Tensor::from_vec(xv.shape(), data).unwrap(), grads);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data =
                    xv.data().iter().zip(gd).map(|(&a, &d)| if a > T::zero() { d } else { T::zero() }).collect();
                send(*x, Tensor::from_vec(xv.shape(), data).unwrap(), grads);
            }
            Op::Dropout(x, mask) => {
                let data = gd.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                send(*x, Tensor::from_vec(g.shape(), data).unwrap(), grads);
            }
            Op::Attention { qkv, heads, probs } => {
                let src = self.value(*qkv).data();
                let (t, d3) = dims2(self.value(*qkv).shape());
                let d = d3 / 3;
                let dh = d / heads;
                let scale = T::one() / T::of(dh as f64).sqrt();
                let mut dqkv = vec![T::zero(); t * d3];
                let mut dp = vec![T::zero(); t * t];
                for h in 0..*heads {
                    let p = &probs[h * t * t..(h + 1) * t * t];
                    let q = MatRef::new(src, h * dh, t, dh, d3, 1);
                    let k = MatRef::new(src, d + h * dh, t, dh, d3, 1);
                    let v = MatRef::new(src, 2 * d + h * dh, t, dh, d3, 1);
                    let dout = MatRef::new(gd, h * dh, t, dh, d, 1);
                    gemm(T::one(), dout, v.t(), T::zero(), MatMut::dense(&mut dp, t, t));
                    gemm(
                        T::one(),
                        MatRef::dense(p, t, t).t(),
                        dout,
                        T::zero(),
                        MatMut::new(&mut dqkv, 2 * d + h * dh, t, dh, d3, 1),
                    );
                    // softmax backward, in place: dS = P ⊙ (dP - rowsum(dP ⊙ P))
                    for r in 0..t {
                        let prow = &p[r * t..(r + 1) * t];
                        let drow = &mut dp[r * t..(r + 1) * t];
                        let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                        for (dv, &pv) in drow.iter_mut().zip(prow) {
                            *dv = pv * (*dv - dot);
                        }
                    }
                    let ds = MatRef::dense(&dp, t, t);
                    gemm(scale, ds, k, T::zero(), MatMut::new(&mut dqkv, h * dh, t, dh, d3, 1));
                    gemm(scale, ds.t(), q, T::zero(), MatMut::new(&mut dqkv, d + h * dh, t, dh, d3, 1));
                }
                send(*qkv, Tensor::from_vec(&[t, d3], dqkv).unwrap(), grads);
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c, h, wd) = dims4(xv.shape());
                let (o, _, kh, kw) = dims4(wv.shape());
                let (ho, wo) = (g.shape()[2], g.shape()[3]);
                let (ck, l) = (c * kh * kw, ho * wo);
                let want_x = self.wants(*x);
                let mut cols = vec![T::zero(); ck * l];
                let mut dcols = vec![T::zero(); if want_x { ck * l } else { 0 }];
                let mut dw = vec![T::zero(); o * ck];
                let mut dx = vec![T::zero(); if want_x { xv.numel() } else { 0 }];
                for s in 0..n {
                    let xs = &xv.data()[s * c * h * wd..(s + 1) * c * h * wd];
                    let dout = MatRef::dense(&gd[s * o * l..(s + 1) * o * l], o, l);
                    im2col(xs, (c, h, wd), (kh, kw), *stride, *pad, (ho, wo), &mut cols);
                    gemm(T::one(), dout, MatRef::dense(&cols, ck, l).t(), T::one(), MatMut::dense(&mut dw, o, ck));
                    if want_x {
                        gemm(T::one(), MatRef::dense(wv.data(), o, ck).t(), dout, T::zero(), MatMut::dense(&mut dcols, ck, l));
                        col2im(
                            &dcols,
                            (c, h, wd),
                            (kh, kw),
                            *stride,
                            *pad,
                            (ho, wo),
                            &mut dx[s * c * h * wd..(s + 1) * c * h * wd],
                        );
                    }
                }
                if self.wants(*w) {
                    send(*w, Tensor::from_vec(wv.shape(), dw).unwrap(), grads);
                }
                if want_x {
                    send(*x, Tensor::from_vec(xv.shape(), dx).unwrap(), grads);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (n, c, h, w) = dims4(self.value(*x).shape());
                let hw = h * w;
                let gam = self.value(*gamma).data();
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for k in base..base + hw {
                            dg[ch] += gd[k] * xhat[k];
                            db[ch] += gd[k];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * c * hw];
                    let cnt = T::of((n * hw) as f64);
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        let (mean_dy, mean_dy_xh) = if *batch_stats { (db[ch] / cnt, dg[ch] / cnt) } else { (T::zero(), T::zero()) };
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for k in base..base + hw {
                                dx[k] = scale * (gd[k] - mean_dy - xhat[k] * mean_dy_xh);
                            }
                        }
                    }
                    send(*x, Tensor::from_vec(&[n, c, h, w], dx).unwrap(), grads);
                }
                send(*gamma, Tensor::from_vec(&[c], dg).unwrap(), grads);
                send(*beta, Tensor::from_vec(&[c], db).unwrap(), grads);
            }
            Op::MaxPool { x, argmax } => {
                let shape = self.value(*x).shape().to_vec();
                let mut dx = Tensor::zeros(&shape);
                let dxd = dx.data_mut();
                for (&idx, &d) in argmax.iter().zip(gd) {
                    dxd[idx] += d;
                }
                send(*x, dx, grads);
            }
            Op::AdaptiveAvgPool { x, out_h, out_w } => {
                let shape = self.value(*x).shape().to_vec();
                let (n, c, h, w) = dims4(&shape);
                let mut dx = Tensor::zeros(&shape);
                let dxd = dx.data_mut();
                for plane in 0..n * c {
                    for oy in 0..*out_h {
                        let (y0, y1) = adaptive_bin(oy, *out_h, h);
                        for ox in 0..*out_w {
                            let (x0, x1) = adaptive_bin(ox, *out_w, w);
                            let share = gd[plane * out_h * out_w + oy * out_w + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    dxd[plane * h * w + iy * w + ix] += share;
                                }
                            }
                        }
                    }
                }
                send(*x, dx, grads);
            }
            Op::ConcatChannels(xs) => {
                let (n, total, h, w) = dims4(g.shape());
                let hw = h * w;
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).shape()[1];
                    if self.wants(x) {
                        let mut part = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let start = (s * total + offset) * hw;
                            part.extend_from_slice(&gd[start..start + c * hw]);
                        }
                        send(x, Tensor::from_vec(&[n, c, h, w], part).unwrap(), grads);
                    }
                    offset += c;
                }
            }
            Op::CrossEntropy { logits, target, weight, probs } => {
                let seed = gd[0] * *weight;
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| seed * (p - if j == *target { T::one() } else { T::zero() }))
                    .collect();
                let shape = self.value(*logits).shape().to_vec();
                send(*logits, Tensor::from_vec(&shape, data).unwrap(), grads);
            }
        }
    }
}

/// Result of [`Graph::backward`]: the gradient reaching every recorded node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(
        f: &dyn Fn(&Tensor<f64>) -> f64,
        x: &Tensor<f64>,
        h: f64,
    ) -> Vec<f64> {
        (0..x.numel())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn check(build: impl Fn(&mut Graph<'_, f64>, Var) -> Var, shape: &[usize]) {
        let store = ParamStore::<f64>::new();
        let x0 = Tensor::from_vec(shape, pseudo(shape.iter().product(), 3)).unwrap();
        let f = |x: &Tensor<f64>| {
            let mut g = Graph::new(&store);
            let v = g.input(x.clone(), true);
            let y = build(&mut g, v);
            // weighted sum to exercise every output element differently
            let w = pseudo(g.value(y).numel(), 9);
            g.value(y).data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::new(&store);
        let v = g.input(x0.clone(), true);
        let y = build(&mut g, v);
        let seed = Tensor::from_vec(g.value(y).shape(), pseudo(g.value(y).numel(), 9)).unwrap();
        let grads = g.backward(y, seed);
        let analytic = grads.get(v).unwrap().data().to_vec();
        let numeric = finite_diff(&f, &x0, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn attention_backward_matches_differences() {
        check(|g, x| g.attention(x, 2), &[5, 12]);
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let mut store = ParamStore::new();
        let gid = store.add("g", Tensor::from_vec(&[4], vec![1.0, 0.5, -1.0, 2.0]).unwrap(), true);
        let bid = store.add("b", Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap(), true);
        let x0 = Tensor::from_vec(&[3, 4], pseudo(12, 5)).unwrap();
        let w = pseudo(12, 7);
        let f = |x: &Tensor<f64>| {
            let mut g = Graph::new(&store);
            let v = g.input(x.clone(), true);
            let (gg, bb) = (g.param(gid), g.param(bid));
            let y = g.layer_norm(v, gg, bb);
            g.value(y).data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::new(&store);
        let v = g.input(x0.clone(), true);
        let (gg, bb) = (g.param(gid), g.param(bid));
        let y = g.layer_norm(v, gg, bb);
        let grads = g.backward(y, Tensor::from_vec(&[3, 4], w.clone()).unwrap());
        let numeric = finite_diff(&f, &x0, 1e-5);
        for (a, n) in grads.get(v).unwrap().data().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn conv_pool_backward_matches_differences() {
        let mut store = ParamStore::new();
        let wid = store.add("w", Tensor::from_vec(&[3, 2, 3, 3], pseudo(54, 11)).unwrap(), true);
        let build = move |g: &mut Graph<'_, f64>, x: Var| {
            let w = g.param(wid);
            let c = g.conv2d(x, w, 2, 1);
            g.adaptive_avg_pool(c, 2, 2)
        };
        let store_ref = &store;
        let x0 = Tensor::from_vec(&[2, 2, 7, 7], pseudo(196, 13)).unwrap();
        let wts = pseudo(2 * 3 * 4, 17);
        let f = |x: &Tensor<f64>| {
            let mut g = Graph::new(store_ref);
            let v = g.input(x.clone(), true);
            let y = build(&mut g, v);
            g.value(y).data().iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::new(store_ref);
        let v = g.input(x0.clone(), true);
        let y = build(&mut g, v);
        let grads = g.backward(y, Tensor::from_vec(&[2, 3, 2, 2], wts.clone()).unwrap());
        let numeric = finite_diff(&f, &x0, 1e-5);
        for (a, n) in grads.get(v).unwrap().data().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn batch_norm_training_backward_matches_differences() {
        let mut store = ParamStore::new();
        let gid = store.add("g", Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap(), true);
        let bid = store.add("b", Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap(), true);
        let rm = store.add("rm", Tensor::zeros(&[2]), false);
        let rv = store.add("rv", Tensor::filled(&[2], 1.0), false);
        check_with_store(&store, move |g, x| {
            let (gg, bb) = (g.param(gid), g.param(bid));
            g.batch_norm(x, gg, bb, (rm, rv), true)
        });
    }

    fn check_with_store(store: &ParamStore<f64>, build: impl Fn(&mut Graph<'_, f64>, Var) -> Var) {
        let shape = [2, 2, 3, 3];
        let x0 = Tensor::from_vec(&shape, pseudo(36, 21)).unwrap();
        let wts = pseudo(36, 23);
        let f = |x: &Tensor<f64>| {
            let mut g = Graph::new(store);
            let v = g.input(x.clone(), true);
            let y = build(&mut g, v);
            g.value(y).data().iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::new(store);
        let v = g.input(x0.clone(), true);
        let y = build(&mut g, v);
        let grads = g.backward(y, Tensor::from_vec(&shape, wts.clone()).unwrap());
        let numeric = finite_diff(&f, &x0, 1e-5);
        for (a, n) in grads.get(v).unwrap().data().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 4.0, 2.0, 3.0]).unwrap(), true);
        let y = g.max_pool(x, 3, 2, 1);
        assert_eq!(g.value(y).data(), &[4.0]);
        let gr = g.backward(y, Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap());
        assert_eq!(gr.get(x).unwrap().data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn adaptive_bins_cover_input() {
        assert_eq!(adaptive_bin(0, 1, 7), (0, 7));
        assert_eq!(adaptive_bin(0, 3, 7), (0, 3));
        assert_eq!(adaptive_bin(1, 3, 7), (2, 5));
        assert_eq!(adaptive_bin(2, 3, 7), (4, 7));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let z = g.input(Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap(), true);
        let l = g.cross_entropy(z, 0, 1.0);
        assert!((g.value(l).data()[0] - 3f64.ln()).abs() < 1e-12);
        let gr = g.backward_scalar(l);
        let d = gr.get(z).unwrap().data();
        assert!((d[0] + 2.0 / 3.0).abs() < 1e-12 && (d[1] - 1.0 / 3.0).abs() < 1e-12);
    }
}
