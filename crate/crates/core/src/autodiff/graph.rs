use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input { slot: usize },
    Constant(Tensor),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Reshape(NodeId),
    Slice { src: NodeId, axis: usize, start: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Sum(NodeId),
    SumRows(NodeId),
    Mean(NodeId),
    Relu(NodeId),
    Softplus(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    Mse(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::Mean(_) => "mean",
            Op::Relu(_) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse(..) => "mse",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    /// Depends on at least one input that requires a gradient.
    tracked: bool,
}

#[derive(Clone, Debug)]
struct InputSlot {
    node: NodeId,
    requires_grad: bool,
}

/// What scalar the backward pass differentiates.
#[derive(Clone, Debug)]
pub enum Seed {
    /// The output itself, which must hold exactly one value.
    Scalar,
    /// One entry of the output, by flat row-major index.
    Index(usize),
    /// `sum(weights * output)`; `weights` must match the output shape.
    Weights(Tensor),
}

/// Gradients of the selected scalar with respect to each graph input.
#[derive(Clone, Debug)]
pub struct Gradients {
    per_slot: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the input was declared without `requires_grad`.
    pub fn get(&self, slot: usize) -> Option<&Tensor> {
        self.per_slot.get(slot).and_then(Option::as_ref)
    }

    pub fn take(&mut self, slot: usize) -> Option<Tensor> {
        self.per_slot.get_mut(slot).and_then(Option::take)
    }
}

/// Statically shaped computation graph with reverse-mode differentiation.
///
/// Nodes are appended by the builder methods, which check shapes eagerly, so
/// insertion order is already a topological order. [`Graph::forward`] caches
/// every intermediate value; [`Graph::backward`] walks the cache in reverse,
/// visiting each node once.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<InputSlot>,
    values: Option<Vec<Tensor>>,
}

fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
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

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, tracked: bool) -> NodeId {
        self.values = None;
        self.nodes.push(Node { op, shape, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    fn mismatch(&self, op: &'static str, expected: String, actual: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            expected,
            actual,
        }
    }

    /// Declares the next input slot. Slots are numbered in declaration order.
    pub fn input(&mut self, shape: &[usize], requires_grad: bool) -> NodeId {
        let slot = self.inputs.len();
        let id = self.push(Op::Input { slot }, shape.to_vec(), requires_grad);
        self.inputs.push(InputSlot {
            node: id,
            requires_grad,
        });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape, false)
    }

    /// Shapes must be equal, or `b` must equal `a` without its leading axis.
    fn broadcast_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || (!sa.is_empty() && &sa[1..] == sb) {
            Ok(sa.to_vec())
        } else {
            Err(self.mismatch(
                op,
                format!("{} or {}", shape_str(sa), shape_str(sa.get(1..).unwrap_or(&[]))),
                shape_str(sb),
            ))
        }
    }

    /// Elementwise sum; the smaller operand may be broadcast over the leading axis.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.order_for_broadcast(a, b);
        let shape = self.broadcast_shape("add", a, b)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Add(a, b), shape, tracked))
    }

    /// Elementwise product; broadcasting as for [`Graph::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.order_for_broadcast(a, b);
        let shape = self.broadcast_shape("mul", a, b)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Mul(a, b), shape, tracked))
    }

    fn order_for_broadcast(&self, a: NodeId, b: NodeId) -> (NodeId, NodeId) {
        if self.shape(a).len() < self.shape(b).len() {
            (b, a)
        } else {
            (a, b)
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch(
                "matmul",
                format!("[m, k] x [k, n] with left {}", shape_str(sa)),
                shape_str(sb),
            ));
        }
        let shape = vec![sa[0], sb[1]];
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::MatMul(a, b), shape, tracked))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let from: usize = self.shape(a).iter().product();
        let to: usize = shape.iter().product();
        if from != to {
            return Err(self.mismatch(
                "reshape",
                format!("{from} elements"),
                format!("{} ({to} elements)", shape_str(shape)),
            ));
        }
        let tracked = self.tracked(a);
        Ok(self.push(Op::Reshape(a), shape.to_vec(), tracked))
    }

    /// Index range `start..end` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || start >= end || end > sa[axis] {
            return Err(self.mismatch(
                "slice",
                format!("0 <= start < end <= dim on axis {axis}"),
                format!("[{start}, {end}) of {}", shape_str(&sa)),
            ));
        }
        let mut shape = sa;
        shape[axis] = end - start;
        let tracked = self.tracked(a);
        Ok(self.push(Op::Slice { src: a, axis, start }, shape, tracked))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .map(|&p| self.shape(p).to_vec())
            .ok_or_else(|| self.mismatch("concat", "at least one part".into(), "none".into()))?;
        if axis >= first.len() {
            return Err(self.mismatch(
                "concat",
                format!("axis < {}", first.len()),
                format!("axis {axis}"),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(self.mismatch("concat", shape_str(&first), shape_str(s)));
            }
            total += s[axis];
        }
        let mut shape = first;
        shape[axis] = total;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            shape,
            tracked,
        ))
    }

    /// Sum of all entries, a rank-0 result.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let tracked = self.tracked(a);
        self.push(Op::Sum(a), Vec::new(), tracked)
    }

    /// Sum over every axis except the leading one: `[B, ...] -> [B]`.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        if sa.is_empty() {
            return Err(self.mismatch("sum_rows", "rank >= 1".into(), shape_str(sa)));
        }
        let shape = vec![sa[0]];
        let tracked = self.tracked(a);
        Ok(self.push(Op::SumRows(a), shape, tracked))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let tracked = self.tracked(a);
        self.push(Op::Mean(a), Vec::new(), tracked)
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a);
        self.push(op, shape, tracked)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu(a), a)
    }

    /// `softplus_beta(z) = (max(bz, 0) + ln(1 + exp(-|bz|))) / b`.
    pub fn softplus(&mut self, a: NodeId, beta: f64) -> Result<NodeId> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("softplus beta must be > 0, got {beta}")));
        }
        Ok(self.unary(Op::Softplus(a, beta), a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(a), a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh(a), a)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        if self.shape(a).is_empty() {
            return Err(self.mismatch("softmax", "rank >= 1".into(), "scalar".into()));
        }
        Ok(self.unary(Op::Softmax(a), a))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(self.mismatch(
                "cross_entropy",
                format!("[{}, C] logits", targets.len()),
                shape_str(&s),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(self.mismatch(
                "cross_entropy",
                format!("class index < {}", s[1]),
                bad.to_string(),
            ));
        }
        let tracked = self.tracked(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            Vec::new(),
            tracked,
        ))
    }

    /// Mean squared difference of two equally shaped nodes.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mse", shape_str(self.shape(a)), shape_str(self.shape(b))));
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Mse(a, b), Vec::new(), tracked))
    }

    /// Multiplies by a constant scalar. Composed from `constant` and `mul`.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let c = self.constant(Tensor::full(self.shape(a), factor));
        self.mul(a, c)
    }

    /// Evaluates every node and caches the values for [`Graph::backward`].
    pub fn forward(&mut self, inputs: &[Tensor], output: NodeId) -> Result<Tensor> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::invalid(format!(
                "graph declares {} inputs, {} were given",
                self.inputs.len(),
                inputs.len()
            )));
        }
        for (slot, (decl, t)) in self.inputs.iter().zip(inputs).enumerate() {
            let expected = &self.nodes[decl.node.0].shape;
            if t.shape() != expected.as_slice() {
                return Err(Error::Shape {
                    node: decl.node.0,
                    op: "input",
                    expected: shape_str(expected),
                    actual: format!("{} (slot {slot})", shape_str(t.shape())),
                });
            }
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = eval(node, &values, inputs);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            values.push(v);
        }
        let out = values[output.0].clone();
        self.values = Some(values);
        Ok(out)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.values
            .as_ref()
            .map(|v| &v[id.0])
            .ok_or(Error::NotEvaluated)
    }

    /// Reverse pass from `output`, differentiating the scalar chosen by `seed`.
    pub fn backward(&self, output: NodeId, seed: Seed) -> Result<Gradients> {
        let values = self.values.as_ref().ok_or(Error::NotEvaluated)?;
        let out_shape = &self.nodes[output.0].shape;
        let numel: usize = out_shape.iter().product();
        let seed_grad = match seed {
            Seed::Scalar => {
                if numel != 1 {
                    return Err(Error::NonScalarSelection(out_shape.clone()));
                }
                vec![1.0]
            }
            Seed::Index(i) => {
                if i >= numel {
                    return Err(Error::invalid(format!(
                        "output index {i} out of range for shape {out_shape:?}"
                    )));
                }
                let mut g = vec![0.0; numel];
                g[i] = 1.0;
                g
            }
            Seed::Weights(w) => {
                if w.shape() != out_shape.as_slice() {
                    return Err(Error::NonScalarSelection(w.shape().to_vec()));
                }
                w.into_data()
            }
        };

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed_grad);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input { .. }) {
                grads[idx] = Some(g);
                continue;
            }
            if !node.tracked {
                continue;
            }
            self.propagate(node, idx, &g, values, &mut grads);
        }

        let per_slot = self
            .inputs
            .iter()
            .map(|decl| {
                decl.requires_grad.then(|| {
                    let shape = &self.nodes[decl.node.0].shape;
                    match grads.get(decl.node.0).and_then(|g| g.clone()) {
                        Some(data) => Tensor::new(shape.clone(), data)
                            .expect("gradient matches input shape"),
                        None => Tensor::zeros(shape),
                    }
                })
            })
            .collect();
        Ok(Gradients { per_slot })
    }

    fn propagate(
        &self,
        node: &Node,
        idx: usize,
        g: &[f64],
        values: &[Tensor],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let out = values[idx].data();
        let mut accumulate = |id: NodeId, contribution: Vec<f64>| {
            if !self.nodes[id.0].tracked {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing
                    .iter_mut()
                    .zip(contribution)
                    .for_each(|(e, c)| *e += c),
                slot => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Input { .. } | Op::Constant(_) => {}
            Op::Add(a, b) => {
                accumulate(*a, g.to_vec());
                let nb = values[b.0].numel();
                accumulate(*b, fold_leading(g, nb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (values[a.0].data(), values[b.0].data());
                let nb = vb.len();
                let ga: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * vb[i % nb]).collect();
                let gb_full: Vec<f64> = g.iter().zip(va).map(|(gi, ai)| gi * ai).collect();
                accumulate(*a, ga);
                accumulate(*b, fold_leading(&gb_full, nb));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&values[a.0], &values[b.0]);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (va, vb) = (ta.data(), tb.data());
                if self.nodes[a.0].tracked {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gij * vb[p * n + j];
                            }
                        }
                    }
                    accumulate(*a, ga);
                }
                if self.nodes[b.0].tracked {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = va[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    accumulate(*b, gb);
                }
            }
            Op::Reshape(a) => accumulate(*a, g.to_vec()),
            Op::Slice { src, axis, start } => {
                let src_shape = &self.nodes[src.0].shape;
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let dim = src_shape[*axis];
                let width = node.shape[*axis];
                let mut gs = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    let from = o * width * inner;
                    gs[dst..dst + width * inner].copy_from_slice(&g[from..from + width * inner]);
                }
                accumulate(*src, gs);
            }
            Op::Concat { parts, axis } => {
                let outer: usize = node.shape[..*axis].iter().product();
                let inner: usize = node.shape[axis + 1..].iter().product();
                let total = node.shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let width = self.nodes[p.0].shape[*axis];
                    let mut gp = Vec::with_capacity(outer * width * inner);
                    for o in 0..outer {
                        let from = o * total * inner + offset * inner;
                        gp.extend_from_slice(&g[from..from + width * inner]);
                    }
                    accumulate(p, gp);
                    offset += width;
                }
            }
            Op::Sum(a) => {
                let n = values[a.0].numel();
                accumulate(*a, vec![g[0]; n]);
            }
            Op::SumRows(a) => {
                let n = values[a.0].numel();
                let rows = node.shape[0];
                let per = n / rows;
                accumulate(*a, (0..n).map(|i| g[i / per]).collect());
            }
            Op::Mean(a) => {
                let n = values[a.0].numel();
                accumulate(*a, vec![g[0] / n as f64; n]);
            }
            Op::Relu(a) => {
                let va = values[a.0].data();
                accumulate(
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect(),
                );
            }
            Op::Softplus(a, beta) => {
                let va = values[a.0].data();
                accumulate(
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(gi, &x)| gi * sigmoid(beta * x))
                        .collect(),
                );
            }
            Op::Sigmoid(a) => accumulate(
                *a,
                g.iter().zip(out).map(|(gi, y)| gi * y * (1.0 - y)).collect(),
            ),
            Op::Tanh(a) => accumulate(
                *a,
                g.iter().zip(out).map(|(gi, y)| gi * (1.0 - y * y)).collect(),
            ),
            Op::Softmax(a) => {
                let c = *node.shape.last().unwrap();
                let mut ga = vec![0.0; g.len()];
                for (row, (gr, sr)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                    let dot: f64 = gr.iter().zip(sr).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        ga[row * c + j] = sr[j] * (gr[j] - dot);
                    }
                }
                accumulate(*a, ga);
            }
            Op::CrossEntropy { logits, targets } => {
                let t = &values[logits.0];
                let c = t.shape()[1];
                let b = targets.len() as f64;
                let mut ga = Vec::with_capacity(t.numel());
                for (row, z) in t.data().chunks(c).enumerate() {
                    let p = softmax_row(z);
                    for (j, pj) in p.into_iter().enumerate() {
                        let onehot = if j == targets[row] { 1.0 } else { 0.0 };
                        ga.push(g[0] * (pj - onehot) / b);
                    }
                }
                accumulate(*logits, ga);
            }
            Op::Mse(a, b) => {
                let (va, vb) = (values[a.0].data(), values[b.0].data());
                let n = va.len() as f64;
                let diff: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| 2.0 * g[0] * (x - y) / n)
                    .collect();
                let neg = diff.iter().map(|d| -d).collect();
                accumulate(*a, diff);
                accumulate(*b, neg);
            }
        }
    }
}

/// Sums a leading-broadcast gradient back down to `n` trailing entries.
fn fold_leading(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        out.iter_mut().zip(chunk).for_each(|(o, c)| *o += c);
    }
    out
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(z: f64, beta: f64) -> f64 {
    let bz = beta * z;
    (bz.max(0.0) + (-bz.abs()).exp().ln_1p()) / beta
}

pub(crate) fn softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(z: &[f64], idx: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[idx] - lse
}

fn eval(node: &Node, values: &[Tensor], inputs: &[Tensor]) -> Tensor {
    let shape = node.shape.clone();
    let data: Vec<f64> = match &node.op {
        Op::Input { slot } => inputs[*slot].data().to_vec(),
        Op::Constant(t) => t.data().to_vec(),
        Op::Add(a, b) => {
            let (va, vb) = (values[a.0].data(), values[b.0].data());
            let nb = vb.len();
            va.iter().enumerate().map(|(i, x)| x + vb[i % nb]).collect()
        }
        Op::Mul(a, b) => {
            let (va, vb) = (values[a.0].data(), values[b.0].data());
            let nb = vb.len();
            va.iter().enumerate().map(|(i, x)| x * vb[i % nb]).collect()
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (&values[a.0], &values[b.0]);
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let (va, vb) = (ta.data(), tb.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = va[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &vb[p * n..(p + 1) * n];
                    row.iter_mut().zip(brow).for_each(|(o, bv)| *o += aip * bv);
                }
            }
            out
        }
        Op::Reshape(a) => values[a.0].data().to_vec(),
        Op::Slice { src, axis, start } => {
            let end = start + shape[*axis];
            return values[src.0]
                .narrow(*axis, *start, end)
                .expect("slice bounds checked at build time");
        }
        Op::Concat { parts, axis } => {
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let t = &values[p.0];
                    let width = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * width..(o + 1) * width]);
                }
            }
            out
        }
        Op::Sum(a) => vec![values[a.0].sum()],
        Op::SumRows(a) => {
            let t = &values[a.0];
            let per = t.numel() / shape[0];
            t.data().chunks(per).map(|c| c.iter().sum()).collect()
        }
        Op::Mean(a) => {
            let t = &values[a.0];
            vec![t.sum() / t.numel() as f64]
        }
        Op::Relu(a) => values[a.0].data().iter().map(|&x| x.max(0.0)).collect(),
        Op::Softplus(a, beta) => values[a.0]
            .data()
            .iter()
            .map(|&x| softplus(x, *beta))
            .collect(),
        Op::Sigmoid(a) => values[a.0].data().iter().map(|&x| sigmoid(x)).collect(),
        Op::Tanh(a) => values[a.0].data().iter().map(|x| x.tanh()).collect(),
        Op::Softmax(a) => {
            let c = *shape.last().unwrap();
            values[a.0].data().chunks(c).flat_map(softmax_row).collect()
        }
        Op::CrossEntropy { logits, targets } => {
            let t = &values[logits.0];
            let c = t.shape()[1];
            let total: f64 = t
                .data()
                .chunks(c)
                .zip(targets)
                .map(|(z, &y)| -log_softmax_at(z, y))
                .sum();
            vec![total / targets.len() as f64]
        }
        Op::Mse(a, b) => {
            let (va, vb) = (values[a.0].data(), values[b.0].data());
            let total: f64 = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum();
            vec![total / va.len() as f64]
        }
    };
    Tensor::new(shape, data).expect("shape inferred at build time")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_unary(build: impl Fn(&mut Graph, NodeId) -> NodeId, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let i = g.input(&[x.len()], false);
        let o = build(&mut g, i);
        g.forward(&[Tensor::vector(x.to_vec())], o)
            .unwrap()
            .into_data()
    }

    #[test]
    fn identity_forward() {
        assert_eq!(run_unary(|_, i| i, &[1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_forward() {
        assert_eq!(
            run_unary(|g, i| g.relu(i), &[-1.0, 0.0, 3.0]),
            vec![0.0, 0.0, 3.0]
        );
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let v = run_unary(|g, i| g.softplus(i, 1.0).unwrap(), &[0.0]);
        assert!((v[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let v = run_unary(|g, i| g.softplus(i, 1.0).unwrap(), &[800.0, -800.0]);
        assert_eq!(v[0], 800.0);
        assert!(v[1] >= 0.0 && v[1] < 1e-300);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(&[], true);
        let y = g.mul(x, x).unwrap();
        g.forward(&[Tensor::scalar(3.0)], y).unwrap();
        let grads = g.backward(y, Seed::Scalar).unwrap();
        assert_eq!(grads.get(0).unwrap().item(), Some(6.0));
    }

    #[test]
    fn linear_gradient_is_weights() {
        let mut g = Graph::new();
        let x = g.input(&[1, 3], true);
        let w = g.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.matmul(x, w).unwrap();
        for xv in [[0.0, 0.0, 0.0], [5.0, -1.0, 2.5]] {
            g.forward(&[Tensor::new(vec![1, 3], xv.to_vec()).unwrap()], y)
                .unwrap();
            let grads = g.backward(y, Seed::Scalar).unwrap();
            assert_eq!(grads.get(0).unwrap().data(), &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut g = Graph::new();
        let x = g.input(&[2], true);
        let s = g.sum(x);
        assert!(matches!(g.backward(s, Seed::Scalar), Err(Error::NotEvaluated)));
    }

    #[test]
    fn non_scalar_selection_fails() {
        let mut g = Graph::new();
        let x = g.input(&[2], true);
        let y = g.tanh(x);
        g.forward(&[Tensor::vector(vec![0.1, 0.2])], y).unwrap();
        assert!(matches!(
            g.backward(y, Seed::Scalar),
            Err(Error::NonScalarSelection(_))
        ));
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::new();
        let a = g.input(&[2, 3], false);
        let b = g.input(&[2, 3], false);
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("node 2") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn input_shape_checked_at_forward() {
        let mut g = Graph::new();
        let a = g.input(&[2], false);
        let err = g.forward(&[Tensor::vector(vec![1.0; 3])], a).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn nan_is_reported() {
        let mut g = Graph::new();
        let a = g.input(&[1], false);
        let b = g.mul(a, a).unwrap();
        let err = g.forward(&[Tensor::vector(vec![f64::NAN])], b).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn leading_broadcast_add() {
        let mut g = Graph::new();
        let a = g.input(&[2, 2], true);
        let b = g.input(&[2], true);
        let c = g.add(a, b).unwrap();
        let s = g.sum(c);
        let out = g
            .forward(
                &[
                    Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                    Tensor::vector(vec![10.0, 20.0]),
                ],
                c,
            )
            .unwrap();
        assert_eq!(out.data(), &[11.0, 22.0, 13.0, 24.0]);
        let grads = g.backward(s, Seed::Scalar).unwrap();
        assert_eq!(grads.get(1).unwrap().data(), &[2.0, 2.0]);
        let wrong = g.input(&[3], false);
        assert!(g.add(a, wrong).is_err());
    }
}
