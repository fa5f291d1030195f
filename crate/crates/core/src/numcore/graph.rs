//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its value and the recipe for its
//! vector-Jacobian product. Node ids grow monotonically, so the tape is
//! topologically sorted by construction and `backward` is a single reverse
//! sweep.

use std::rc::Rc;
use std::sync::Arc;

use super::kernels::{self, Conv2dGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::quant::QuantParams;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { x: Var, index: Rc<[Option<usize>]> },
    MaxPool { x: Var, argmax: Vec<usize> },
    FakeQuant { x: Var, pass: Vec<bool> },
    MulConst { x: Var, factor: Vec<f64> },
    Concat { parts: Vec<Var>, outer: usize, inner: usize },
    Reshape(Var),
    Sum(Var),
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<Option<usize>>, count: usize },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// A recorded forward computation.
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the leaves of a graph.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf, or `None` when the leaf does not influence the
    /// loss or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn add_owned(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(&src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A graph that never tracks gradients. Values are still computed.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Gradients are tracked when the tensor asks for them.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.param(Arc::new(t))
    }

    /// Adds a shared leaf without copying its storage.
    pub fn param(&mut self, t: Arc<Tensor>) -> Var {
        let needs_grad = self.record && t.requires_grad();
        self.push_arc(t, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_arc(Arc::new(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        let needs_grad = self.record && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        let value = Tensor::new(shape, data).expect("kernel produced a consistent shape");
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| Error::shape(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}×{k}] · [{k2}×{n}]")));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(vec![m, n], c, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(bias).len();
        if self.shape(x).last() != Some(&n) {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + [{n}]", self.shape(x)),
            ));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        Ok(self.push(self.shape(x).to_vec(), data, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * s).collect();
        self.push(self.shape(x).to_vec(), data, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        self.push(self.shape(x).to_vec(), data, Op::Relu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax with masked entries (`true`) forced to zero probability.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} of {shape:?}")));
        }
        if let Some(m) = mask {
            if m.len() != self.value(x).len() {
                return Err(Error::shape("softmax", "mask size differs from input"));
            }
        }
        self.value(x).check_finite("softmax input")?;
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let y = kernels::softmax(self.value(x).data(), outer, n, inner, mask);
        Ok(self.push(shape, y, Op::Softmax { x, outer, n, inner }, &[x]))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&0);
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::shape(
                "layer_norm",
                format!("{:?} with affine of length {}", self.shape(x), self.value(gamma).len()),
            ));
        }
        let (y, xhat, rstd) = kernels::layer_norm(
            self.value(x).data(),
            cols,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        Ok(self.push(
            self.shape(x).to_vec(),
            y,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            &[x, gamma, beta],
        ))
    }

    /// Generic gather through an index map; `None` entries produce zeros.
    pub fn gather(&mut self, x: Var, index: Rc<[Option<usize>]>, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape("gather", "index length differs from output shape"));
        }
        let len = self.value(x).len();
        if index.iter().flatten().any(|&i| i >= len) {
            return Err(Error::shape("gather", "index out of bounds"));
        }
        let data = kernels::gather(self.value(x).data(), &index, 0.0);
        Ok(self.push(shape, data, Op::Gather { x, index }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        self.gather(x, kernels::transpose_index(r, c).into(), vec![c, r])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::shape("permute", format!("{perm:?} for {shape:?}")));
        }
        let (out_shape, idx) = kernels::permute_index(&shape, perm);
        self.gather(x, idx.into(), out_shape)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        self.gather(x, kernels::slice_cols_index(r, c, start, len).into(), vec![r, len])
    }

    /// Rows of a `[vocab, d]` table selected by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let idx: Vec<Option<usize>> = ids
            .iter()
            .flat_map(|&i| (0..d).map(move |c| Some(i * d + c)))
            .collect();
        self.gather(table, idx.into(), vec![ids.len(), d])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push(shape, data, Op::Reshape(x), &[x]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = self.shape(*p)[axis];
                let src = self.value(*p).data();
                data.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            shape,
            data,
            Op::Concat { parts: parts.to_vec(), outer, inner },
            parts,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    /// 2D cross-correlation of `x[C, H, W]` with `w[C_out, C, k, k]` plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, wd) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape("conv2d", format!("input must be [C,H,W], got {s:?}"))),
        };
        let (c_out, k) = match self.shape(w) {
            [co, ci, kh, kw] if *ci == c && kh == kw => (*co, *kh),
            s => return Err(Error::shape("conv2d", format!("kernel {s:?} for {c} channels"))),
        };
        let geo = Conv2dGeometry {
            in_channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let (ho, wo) = geo.out_hw().ok_or_else(|| {
            Error::shape("conv2d", format!("kernel {k} larger than padded input {h}×{wd}"))
        })?;
        let idx = geo.im2col_index().expect("geometry checked");
        let cols = self.gather(x, idx.into(), vec![ho * wo, geo.patch_len()])?;
        let w2 = self.reshape(w, vec![c_out, geo.patch_len()])?;
        let w2t = self.transpose(w2)?;
        let y = self.matmul(cols, w2t)?;
        let y = self.add_bias(y, b)?;
        let y = self.transpose(y)?;
        self.reshape(y, vec![c_out, ho, wo])
    }

    /// Causal convolution over `x[T, d]` with `w[width, d, d_out]` plus bias.
    /// Output at step t reads only steps ≤ t.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t, d) = self.dims2(x, "causal_conv1d")?;
        let (width, d_out) = match self.shape(w) {
            [wd, di, o] if *di == d && *wd >= 1 => (*wd, *o),
            s => return Err(Error::shape("causal_conv1d", format!("kernel {s:?} for d={d}"))),
        };
        let cols = self.gather(x, kernels::causal_index(t, d, width).into(), vec![t, width * d])?;
        let w2 = self.reshape(w, vec![width * d, d_out])?;
        let y = self.matmul(cols, w2)?;
        self.add_bias(y, b)
    }

    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape("max_pool2d", format!("input must be [C,H,W], got {s:?}"))),
        };
        let (out, argmax, ho, wo) = kernels::max_pool2d(self.value(x).data(), c, h, w, window, stride)
            .ok_or_else(|| Error::shape("max_pool2d", format!("window {window} on {h}×{w}")))?;
        Ok(self.push(vec![c, ho, wo], out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Quantize-dequantize with a straight-through gradient inside `[a, b]`.
    pub fn fake_quant(&mut self, x: Var, p: &QuantParams) -> Var {
        let (lo, hi) = (p.a(), p.b());
        let src = self.value(x).data();
        let data = src.iter().map(|&v| p.fake(v)).collect();
        let pass = src.iter().map(|&v| v >= lo && v <= hi).collect();
        self.push(self.shape(x).to_vec(), data, Op::FakeQuant { x, pass }, &[x])
    }

    /// Multiplies by a fixed factor per element (dropout masks).
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(x).len() {
            return Err(Error::shape("mul_const", "factor length differs from input"));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&factor)
            .map(|(a, b)| a * b)
            .collect();
        Ok(self.push(self.shape(x).to_vec(), data, Op::MulConst { x, factor }, &[x]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[L, V]`; rows whose target equals `pad_id` are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        let (rows, vocab) = self.dims2(logits, "cross_entropy")?;
        if rows != targets.len() {
            return Err(Error::shape("cross_entropy", format!("{rows} rows, {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::contract(format!("target {bad} outside vocabulary of {vocab}")));
        }
        let live: Vec<Option<usize>> = targets
            .iter()
            .map(|&t| (t != pad_id).then_some(t))
            .collect();
        let count = live.iter().flatten().count();
        if count == 0 {
            return Err(Error::contract("cross_entropy on an all-padding target"));
        }
        self.value(logits).check_finite("logits")?;
        let probs = kernels::softmax(self.value(logits).data(), rows, vocab, 1, None);
        let mut nll = 0.0;
        let x = self.value(logits).data();
        for (r, t) in live.iter().enumerate() {
            if let Some(t) = t {
                let row = &x[r * vocab..(r + 1) * vocab];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                nll += lse - row[*t];
            }
        }
        let loss = nll / count as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy { logits, probs, targets: live, count },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if self.wants(*a) {
                    let da = kernels::matmul_a_bt(g, self.value(*b).data(), *m, *n, *k);
                    add_owned(&mut grads[a.0], da);
                }
                if self.wants(*b) {
                    let db = kernels::matmul_at_b(self.value(*a).data(), g, *m, *k, *n);
                    add_owned(&mut grads[b.0], db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.wants(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        db[i % n] += v;
                    }
                    add_owned(&mut grads[bias.0], db);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    add_owned(&mut grads[a.0], d);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    add_owned(&mut grads[b.0], d);
                }
            }
            Op::Scale(x, s) => {
                add_owned(&mut grads[x.0], g.iter().map(|v| v * s).collect());
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                add_owned(&mut grads[x.0], d);
            }
            Op::Softmax { x, outer, n, inner } => {
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for q in 0..*inner {
                        let idx = |j: usize| (o * n + j) * inner + q;
                        let dot: f64 = (0..*n).map(|j| y[idx(j)] * g[idx(j)]).sum();
                        for j in 0..*n {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                add_owned(&mut grads[x.0], dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gm = self.value(*gamma).data();
                let cols = gm.len();
                if self.wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, rs) in rstd.iter().enumerate() {
                        let span = r * cols..(r + 1) * cols;
                        let gr = &g[span.clone()];
                        let hr = &xhat[span.clone()];
                        let dh: Vec<f64> = gr.iter().zip(gm).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / cols as f64;
                        let mean_dhh =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            dx[r * cols + c] = rs * (dh[c] - mean_dh - hr[c] * mean_dhh);
                        }
                    }
                    add_owned(&mut grads[x.0], dx);
                }
                if self.wants(*gamma) {
                    let mut dg = vec![0.0; cols];
                    for (i, (gv, hv)) in g.iter().zip(xhat).enumerate() {
                        dg[i % cols] += gv * hv;
                    }
                    add_owned(&mut grads[gamma.0], dg);
                }
                if self.wants(*beta) {
                    let mut db = vec![0.0; cols];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % cols] += gv;
                    }
                    add_owned(&mut grads[beta.0], db);
                }
            }
            Op::Gather { x, index } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, src) in g.iter().zip(index.iter()) {
                    if let Some(j) = src {
                        dx[*j] += gv;
                    }
                }
                add_owned(&mut grads[x.0], dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
                add_owned(&mut grads[x.0], dx);
            }
            Op::FakeQuant { x, pass } => {
                let d = g
                    .iter()
                    .zip(pass)
                    .map(|(gv, &p)| if p { *gv } else { 0.0 })
                    .collect();
                add_owned(&mut grads[x.0], d);
            }
            Op::MulConst { x, factor } => {
                add_owned(&mut grads[x.0], g.iter().zip(factor).map(|(a, b)| a * b).collect());
            }
            Op::Concat { parts, outer, inner } => {
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).len() / outer / inner).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(outer * w * inner);
                        for o in 0..*outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&g[start..start + w * inner]);
                        }
                        add_owned(&mut grads[p.0], d);
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::Sum(x) => {
                add_owned(&mut grads[x.0], vec![g[0]; self.value(*x).len()]);
            }
            Op::CrossEntropy { logits, probs, targets, count } => {
                let vocab = self.shape(*logits)[1];
                let scale = g[0] / *count as f64;
                let mut d = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for c in 0..vocab {
                            d[r * vocab + c] = probs[r * vocab + c] * scale;
                        }
                        d[r * vocab + t] -= scale;
                    }
                }
                add_owned(&mut grads[logits.0], d);
            }
        }
    }
}
