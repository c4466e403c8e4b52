//! Computation record for reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]. Because a node can only
//! reference nodes that already exist, creation order is a topological order
//! and [`Graph::backward`] simply walks the nodes in reverse.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside this module (e.g. a sequence loss).
///
/// `backward` receives the upstream gradient of the node's output and
/// returns one optional gradient per input, each shaped like that input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, grad_out: &Tensor, inputs: &[&Tensor], output: &Tensor)
        -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add,
    AddRow,
    Mul,
    Scale(f64),
    MatMul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Sigmoid,
    Tanh,
    HardTanh { lo: f64, hi: f64 },
    LogSoftmax { axis: usize },
    ReduceSum,
    ReduceMean,
    GradReverse { coef: f64 },
    Conv2d { stride: (usize, usize) },
    ChannelsToFrames,
    Custom(Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::AddRow => "add_row",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::MatMul => "matmul",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::HardTanh { .. } => "hardtanh",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::ReduceSum => "reduce_sum",
            Op::ReduceMean => "reduce_mean",
            Op::GradReverse { .. } => "grad_reverse",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelsToFrames => "channels_to_frames",
            Op::Custom(c) => c.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    parents: Vec<Var>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `v`, if any
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    /// Like [`Graph::grad`] but zero-filled when no gradient arrived.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, parents: Vec<Var>, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        match *self.shape(a) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![0, 0],
            }),
        }
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(op, vec![a], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Add, vec![a, b], value)
    }

    /// Adds a `[cols]` vector to every row of a `[rows, cols]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, cols) = self.rank2("add_row", a)?;
        if self.shape(row) != [cols] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(row).to_vec(),
            });
        }
        let (va, vr) = (self.value(a), self.value(row));
        let data = va
            .data()
            .chunks(cols)
            .flat_map(|r| r.iter().zip(vr.data()).map(|(x, y)| x + y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::AddRow, vec![a, row], value)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Mul, vec![a, b], value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(Op::Scale(factor), a, |x| x * factor)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul, vec![a, b], value)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::ShapeMismatch {
            op: "concat",
            left: Vec::new(),
            right: Vec::new(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: base,
                right: vec![axis],
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push(Op::Concat { axis }, parts.to_vec(), value)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: shape,
                right: vec![axis, start, len],
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(Op::Slice { axis, start }, vec![a], value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Tanh, a, f64::tanh)
    }

    /// Clamps to `[lo, hi]`.
    pub fn hardtanh(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(Op::HardTanh { lo, hi }, a, |x| x.clamp(lo, hi))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.hardtanh(a, 0.0, f64::INFINITY)
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::ShapeMismatch {
                op: "log_softmax",
                left: shape,
                right: vec![axis],
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * dim * inner + k * inner + i;
                let max = (0..dim).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..dim).map(|k| (src[idx(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..dim {
                    out[idx(k)] = src[idx(k)] - lse;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(Op::LogSoftmax { axis }, vec![a], value)
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::ReduceSum, vec![a], Tensor::scalar(s))
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::ReduceMean, vec![a], Tensor::scalar(m))
    }

    /// Identity on the forward pass; scales the gradient by `-coef` on the
    /// way back.
    pub fn grad_reverse(&mut self, a: Var, coef: f64) -> Result<Var> {
        let value = self.value(a).clone();
        self.push(Op::GradReverse { coef }, vec![a], value)
    }

    /// Valid (unpadded) 2-D convolution.
    ///
    /// `input` is `[c_in, freq, time]`, `weight` is `[c_out, c_in, k_freq,
    /// k_time]`, `bias` is `[c_out]`. The output is `[c_out, freq', time']`
    /// with `freq' = (freq - k_freq) / stride.0 + 1` and likewise for time.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: (usize, usize),
    ) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            left: ishape.clone(),
            right: wshape.clone(),
        };
        let (&[c_in, fi, ti], &[c_out, wc_in, kf, kt]) = (&ishape[..], &wshape[..]) else {
            return Err(mismatch());
        };
        if c_in != wc_in || kf > fi || kt > ti || stride.0 == 0 || stride.1 == 0 {
            return Err(mismatch());
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: wshape.clone(),
                right: self.shape(bias).to_vec(),
            });
        }
        let fo = (fi - kf) / stride.0 + 1;
        let to = (ti - kt) / stride.1 + 1;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; c_out * fo * to];
        for co in 0..c_out {
            for f in 0..fo {
                for t in 0..to {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for df in 0..kf {
                            let xrow = (ci * fi + f * stride.0 + df) * ti + t * stride.1;
                            let wrow = ((co * c_in + ci) * kf + df) * kt;
                            for dt in 0..kt {
                                acc += w[wrow + dt] * x[xrow + dt];
                            }
                        }
                    }
                    out[(co * fo + f) * to + t] = acc;
                }
            }
        }
        let value = Tensor::new(vec![c_out, fo, to], out)?;
        self.push(Op::Conv2d { stride }, vec![input, weight, bias], value)
    }

    /// Rearranges `[channels, freq, time]` into per-frame rows
    /// `[time, channels * freq]`.
    pub fn channels_to_frames(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [c, f, t] = shape[..] else {
            return Err(Error::ShapeMismatch {
                op: "channels_to_frames",
                left: shape,
                right: vec![0, 0, 0],
            });
        };
        let src = self.value(a).data();
        let mut out = vec![0.0; c * f * t];
        for ci in 0..c {
            for fi in 0..f {
                for ti in 0..t {
                    out[ti * c * f + ci * f + fi] = src[(ci * f + fi) * t + ti];
                }
            }
        }
        let value = Tensor::new(vec![t, c * f], out)?;
        self.push(Op::ChannelsToFrames, vec![a], value)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: Vec<Var>, value: Tensor) -> Result<Var> {
        self.push(Op::Custom(op), inputs, value)
    }

    /// Back-propagates from a scalar `root`, filling gradients of every node
    /// that depends on a parameter leaf. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Lazily zero-initialised gradient buffer of `p`, or `None` when `p` does not
/// lead to any parameter.
fn parent_grad<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    p: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[p.0].requires_grad {
        return None;
    }
    let n = nodes[p.0].value.numel();
    Some(grads[p.0].get_or_insert_with(|| vec![0.0; n]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let parents = &node.parents;
    let out = &node.value;
    let val = |p: Var| &nodes[p.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add => {
            for &p in parents {
                if let Some(pg) = parent_grad(nodes, grads, p) {
                    add_into(pg, g);
                }
            }
        }
        Op::AddRow => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                add_into(pg, g);
            }
            let cols = val(parents[1]).numel();
            if let Some(pg) = parent_grad(nodes, grads, parents[1]) {
                for row in g.chunks(cols) {
                    add_into(pg, row);
                }
            }
        }
        Op::Mul => {
            let (a, b) = (parents[0], parents[1]);
            if let Some(pg) = parent_grad(nodes, grads, a) {
                for ((d, gi), y) in pg.iter_mut().zip(g).zip(val(b).data()) {
                    *d += gi * y;
                }
            }
            if let Some(pg) = parent_grad(nodes, grads, b) {
                for ((d, gi), x) in pg.iter_mut().zip(g).zip(val(a).data()) {
                    *d += gi * x;
                }
            }
        }
        Op::Scale(factor) => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for (d, gi) in pg.iter_mut().zip(g) {
                    *d += gi * factor;
                }
            }
        }
        Op::MatMul => {
            let (a, b) = (parents[0], parents[1]);
            let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
            let n = val(b).shape()[1];
            if let Some(pg) = parent_grad(nodes, grads, a) {
                // dA = G · Bᵀ
                let vb = val(b).data();
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for c in 0..k {
                        let brow = &vb[c * n..(c + 1) * n];
                        pg[r * k + c] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(pg) = parent_grad(nodes, grads, b) {
                // dB = Aᵀ · G
                let va = val(a).data();
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for c in 0..k {
                        let x = va[r * k + c];
                        if x != 0.0 {
                            for (d, gi) in pg[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                *d += x * gi;
                            }
                        }
                    }
                }
            }
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &p in parents {
                let len = val(p).shape()[*axis];
                if let Some(pg) = parent_grad(nodes, grads, p) {
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        add_into(
                            &mut pg[o * len * inner..(o + 1) * len * inner],
                            &g[src..src + len * inner],
                        );
                    }
                }
                offset += len;
            }
        }
        Op::Slice { axis, start } => {
            let p = parents[0];
            let len = out.shape()[*axis];
            let (outer, dim, inner) = split_axis(val(p).shape(), *axis);
            if let Some(pg) = parent_grad(nodes, grads, p) {
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    add_into(
                        &mut pg[dst..dst + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
        }
        Op::Sigmoid => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for ((d, gi), s) in pg.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * s * (1.0 - s);
                }
            }
        }
        Op::Tanh => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for ((d, gi), t) in pg.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * (1.0 - t * t);
                }
            }
        }
        Op::HardTanh { lo, hi } => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for ((d, gi), x) in pg.iter_mut().zip(g).zip(val(parents[0]).data()) {
                    if x > lo && x < hi {
                        *d += gi;
                    }
                }
            }
        }
        Op::LogSoftmax { axis } => {
            let (outer, dim, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for o in 0..outer {
                    for n in 0..inner {
                        let idx = |k: usize| o * dim * inner + k * inner + n;
                        let gsum: f64 = (0..dim).map(|k| g[idx(k)]).sum();
                        for k in 0..dim {
                            pg[idx(k)] += g[idx(k)] - y[idx(k)].exp() * gsum;
                        }
                    }
                }
            }
        }
        Op::ReduceSum => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                pg.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::ReduceMean => {
            let n = val(parents[0]).numel() as f64;
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                pg.iter_mut().for_each(|d| *d += g[0] / n);
            }
        }
        Op::GradReverse { coef } => {
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for (d, gi) in pg.iter_mut().zip(g) {
                    *d += -coef * gi;
                }
            }
        }
        Op::Conv2d { stride } => conv2d_backward(nodes, grads, parents, *stride, out, g),
        Op::ChannelsToFrames => {
            let [c, f, t] = val(parents[0]).shape()[..] else { unreachable!() };
            if let Some(pg) = parent_grad(nodes, grads, parents[0]) {
                for ci in 0..c {
                    for fi in 0..f {
                        for ti in 0..t {
                            pg[(ci * f + fi) * t + ti] += g[ti * c * f + ci * f + fi];
                        }
                    }
                }
            }
        }
        Op::Custom(custom) => {
            let upstream = Tensor::new(out.shape().to_vec(), g.to_vec()).expect("grad shape");
            let inputs: Vec<&Tensor> = parents.iter().map(|p| val(*p)).collect();
            let contributions = custom.backward(&upstream, &inputs, out);
            for (p, contrib) in parents.iter().zip(contributions) {
                if let (Some(c), Some(pg)) = (contrib, parent_grad(nodes, grads, *p)) {
                    add_into(pg, c.data());
                }
            }
        }
    }
}

fn conv2d_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    parents: &[Var],
    stride: (usize, usize),
    out: &Tensor,
    g: &[f64],
) {
    let (input, weight, bias) = (parents[0], parents[1], parents[2]);
    let [c_in, fi, ti] = nodes[input.0].value.shape()[..] else { unreachable!() };
    let [c_out, _, kf, kt] = nodes[weight.0].value.shape()[..] else { unreachable!() };
    let [_, fo, to] = out.shape()[..] else { unreachable!() };
    if let Some(pg) = parent_grad(nodes, grads, bias) {
        for co in 0..c_out {
            pg[co] += g[co * fo * to..(co + 1) * fo * to].iter().sum::<f64>();
        }
    }
    // Visits every (output cell, kernel tap) pair with flat input/weight offsets.
    let for_each_tap = |mut visit: Box<dyn FnMut(f64, usize, usize) + '_>| {
        for co in 0..c_out {
            for f in 0..fo {
                for t in 0..to {
                    let go = g[(co * fo + f) * to + t];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..c_in {
                        for df in 0..kf {
                            let xrow = (ci * fi + f * stride.0 + df) * ti + t * stride.1;
                            let wrow = ((co * c_in + ci) * kf + df) * kt;
                            for dt in 0..kt {
                                visit(go, xrow + dt, wrow + dt);
                            }
                        }
                    }
                }
            }
        }
    };
    if let Some(pg) = parent_grad(nodes, grads, weight) {
        let x = nodes[input.0].value.data();
        for_each_tap(Box::new(|go, xi, wi| pg[wi] += go * x[xi]));
    }
    if let Some(pg) = parent_grad(nodes, grads, input) {
        let w = nodes[weight.0].value.data();
        for_each_tap(Box::new(|go, xi, wi| pg[xi] += go * w[wi]));
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let x = a[r * k + c];
            if x == 0.0 {
                continue;
            }
            for (o, y) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += x * y;
            }
        }
    }
}
