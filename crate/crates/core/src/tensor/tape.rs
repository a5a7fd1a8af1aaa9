use std::sync::Arc;

use super::Tensor;
use crate::error::{bail, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations understood by the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Differentiable input (a parameter or anything we want gradients for).
    Leaf,
    /// Non-differentiable input.
    Constant,
    /// `(m,k)·(k,n)`, `(k)·(k,n)` or `(m,k)·(k)`.
    MatMul,
    /// Elementwise, or matrix plus row vector (bias add).
    Add,
    Sub,
    Mul,
    /// Concatenation along axis 0; trailing dimensions must agree.
    Concat,
    /// Inner product of two vectors, yielding shape `[1]`.
    Dot,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    SoftmaxAxis(usize),
    MaxAxis(usize),
    SumAxis(usize),
    Scale(f64),
    Reshape(Vec<usize>),
    /// Clamp into `[lo, hi]`; gradient is zero where clamping was active.
    Clamp {
        lo: f64,
        hi: f64,
    },
}

impl Op {
    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf | Op::Constant => Some(0),
            Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::Dot => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Arc<Tensor>,
    /// Argmax positions for `MaxAxis`.
    saved: Option<Vec<usize>>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumer and a reverse scan is a valid backward schedule.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; zeros of the node's shape when nothing flowed there.
    ///
    /// Only leaf gradients are retained after the pass.
    pub fn get(&self, id: NodeId) -> Tensor {
        match self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Vec::new(), Arc::new(value), None, true)
    }

    /// Leaf sharing storage with an existing tensor (no copy).
    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value, None, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, Vec::new(), Arc::new(value), None, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(
        &mut self,
        op: Op,
        inputs: Vec<NodeId>,
        value: Arc<Tensor>,
        saved: Option<Vec<usize>>,
        requires_grad: bool,
    ) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            saved,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Applies a primitive to recorded inputs and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if matches!(op, Op::Leaf | Op::Constant) {
            bail!(Tape, "leaves are created with leaf() or constant()");
        }
        if let Some(&bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            bail!(Tape, "node {} is not on this tape", bad.0);
        }
        let values: Vec<&Tensor> = inputs.iter().map(|id| &*self.nodes[id.0].value).collect();
        let (value, saved) = forward(&op, &values)?;
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            bail!(Domain, "{op:?} produced a non-finite value at index {pos}");
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(op, inputs.to_vec(), Arc::new(value), saved, requires_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Concat, parts)
    }
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Dot, &[a, b])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::SoftmaxAxis(axis), &[a])
    }
    pub fn max_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::MaxAxis(axis), &[a])
    }
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::SumAxis(axis), &[a])
    }
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Op::Scale(factor), &[a])
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.apply(Op::Clamp { lo, hi }, &[a])
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            bail!(EmptyInput, "stack of zero tensors");
        };
        let inner = self.value(first).shape().to_vec();
        let mut rows = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut shape = vec![1];
            shape.extend_from_slice(self.value(p).shape());
            if shape[1..] != inner[..] {
                bail!(
                    Shape,
                    "stack of mismatched shapes {:?} and {:?}",
                    inner,
                    &shape[1..]
                );
            }
            rows.push(self.reshape(p, &shape)?);
        }
        if rows.len() == 1 {
            return Ok(rows[0]);
        }
        self.concat(&rows)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let Some(node) = self.nodes.get(loss.0) else {
            bail!(Tape, "loss node {} is not on this tape", loss.0);
        };
        if !node.value.is_scalar() {
            bail!(
                Shape,
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            );
        }
        let seed = Tensor::filled(node.value.shape(), 1.0);
        self.backward_with_seed(loss, seed)
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `output`.
    pub fn backward_with_seed(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        let Some(node) = self.nodes.get(output.0) else {
            bail!(Tape, "node {} is not on this tape", output.0);
        };
        if node.value.shape() != seed.shape() {
            bail!(
                Shape,
                "seed shape {:?} vs output {:?}",
                seed.shape(),
                node.value.shape()
            );
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|id| &*self.nodes[id.0].value)
                .collect();
            let local = backward(
                &node.op,
                &inputs,
                &node.value,
                node.saved.as_deref(),
                &upstream,
            )?;
            for (input, g) in node.inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    ///
    /// Returns a fresh tape; callers compare its values against this one.
    pub fn replay(&self) -> Result<Tape> {
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            if node.inputs.is_empty() && matches!(node.op, Op::Leaf | Op::Constant) {
                out.nodes.push(node.clone());
            } else {
                let id = out.apply(node.op.clone(), &node.inputs)?;
                debug_assert_eq!(id.0 + 1, out.nodes.len());
            }
        }
        Ok(out)
    }
}

type Forward = (Tensor, Option<Vec<usize>>);

fn expect_arity(op: &Op, n: usize) -> Result<()> {
    match op.arity() {
        Some(k) if k != n => bail!(Shape, "{op:?} takes {k} inputs, got {n}"),
        None if n == 0 => bail!(EmptyInput, "{op:?} needs at least one input"),
        _ => Ok(()),
    }
}

/// Decomposes `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        bail!(Shape, "axis {axis} out of range for shape {shape:?}");
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

/// Views a matmul operand pair as 2-D `(m,k)·(k,n)` and gives the output shape.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    let (m, k, n, out) = match (a.len(), b.len()) {
        (2, 2) => (a[0], a[1], b[1], vec![a[0], b[1]]),
        (1, 2) => (1, a[0], b[1], vec![b[1]]),
        (2, 1) => (a[0], a[1], 1, vec![a[0]]),
        _ => bail!(Shape, "matmul of shapes {a:?} and {b:?}"),
    };
    let kb = b[0];
    if k != kb {
        bail!(Shape, "matmul inner dimensions differ: {a:?} x {b:?}");
    }
    Ok((m, k, n, out))
}

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn is_bias_add(a: &Tensor, b: &Tensor) -> bool {
    a.shape().len() == 2 && b.shape().len() == 1 && a.shape()[1] == b.shape()[0]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Forward> {
    expect_arity(op, inputs.len())?;
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("leaves are never re-evaluated"),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n, shape) = matmul_dims(a.shape(), b.shape())?;
            Tensor::from_parts(shape, gemm(a.data(), b.data(), m, k, n))
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                zip_map(a, b, |x, y| x + y)
            } else if is_bias_add(a, b) {
                let cols = b.len();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x + b.data()[i % cols])
                    .collect();
                Tensor::from_parts(a.shape().to_vec(), data)
            } else {
                bail!(Shape, "add of shapes {:?} and {:?}", a.shape(), b.shape());
            }
        }
        Op::Sub | Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                bail!(
                    Shape,
                    "{op:?} of shapes {:?} and {:?}",
                    a.shape(),
                    b.shape()
                );
            }
            if *op == Op::Sub {
                zip_map(a, b, |x, y| x - y)
            } else {
                zip_map(a, b, |x, y| x * y)
            }
        }
        Op::Concat => {
            let trailing = &inputs[0].shape()[1..];
            let mut rows = 0;
            let mut data = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
            for t in inputs {
                if &t.shape()[1..] != trailing {
                    bail!(
                        Shape,
                        "concat of {:?} with trailing dims {:?}",
                        t.shape(),
                        trailing
                    );
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![rows];
            shape.extend_from_slice(trailing);
            Tensor::from_parts(shape, data)
        }
        Op::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 1 || a.shape() != b.shape() {
                bail!(Shape, "dot of shapes {:?} and {:?}", a.shape(), b.shape());
            }
            let v = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
            Tensor::from_parts(vec![1], vec![v])
        }
        Op::Sigmoid => map(inputs[0], sigmoid),
        Op::Tanh => map(inputs[0], f64::tanh),
        Op::Relu => map(inputs[0], |x| x.max(0.0)),
        Op::Exp => map(inputs[0], f64::exp),
        Op::Log => {
            if let Some(v) = inputs[0].data().iter().find(|&&v| v <= 0.0) {
                bail!(Domain, "log of non-positive value {v}");
            }
            map(inputs[0], f64::ln)
        }
        Op::SoftmaxAxis(axis) => {
            let x = inputs[0];
            let (outer, len, inner) = split_axis(x.shape(), *axis)?;
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let max = (0..len)
                        .map(|j| x.data()[at(j)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in 0..len {
                        let e = (x.data()[at(j)] - max).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    for j in 0..len {
                        out[at(j)] /= total;
                    }
                }
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        }
        Op::MaxAxis(axis) => {
            let x = inputs[0];
            let (outer, len, inner) = split_axis(x.shape(), *axis)?;
            let mut out = Vec::with_capacity(outer * inner);
            let mut arg = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = 0;
                    let mut best_v = x.data()[o * len * inner + i];
                    for j in 1..len {
                        let v = x.data()[o * len * inner + j * inner + i];
                        // strict comparison keeps the lowest tied index
                        if v > best_v {
                            best = j;
                            best_v = v;
                        }
                    }
                    out.push(best_v);
                    arg.push(best);
                }
            }
            return Ok((
                Tensor::from_parts(reduced_shape(x.shape(), *axis), out),
                Some(arg),
            ));
        }
        Op::SumAxis(axis) => {
            let x = inputs[0];
            let (outer, len, inner) = split_axis(x.shape(), *axis)?;
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += x.data()[o * len * inner + j * inner + i];
                    }
                }
            }
            Tensor::from_parts(reduced_shape(x.shape(), *axis), out)
        }
        Op::Scale(c) => {
            let c = *c;
            map(inputs[0], |x| x * c)
        }
        Op::Reshape(shape) => {
            if shape.iter().product::<usize>() != inputs[0].len() || shape.contains(&0) {
                bail!(Shape, "cannot reshape {:?} to {shape:?}", inputs[0].shape());
            }
            Tensor::from_parts(shape.clone(), inputs[0].data().to_vec())
        }
        Op::Clamp { lo, hi } => {
            if lo > hi {
                bail!(Domain, "clamp bounds reversed: [{lo}, {hi}]");
            }
            map(inputs[0], |x| x.clamp(*lo, *hi))
        }
    };
    Ok((out, None))
}

fn backward(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    saved: Option<&[usize]>,
    up: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    let g = match op {
        Op::Leaf | Op::Constant => Vec::new(),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n, _) = matmul_dims(a.shape(), b.shape())?;
            let dc = up.data();
            // dA = dC · Bᵀ
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    let brow = &b.data()[p * n..(p + 1) * n];
                    da[i * k + p] = dc[i * n..(i + 1) * n]
                        .iter()
                        .zip(brow)
                        .map(|(x, y)| x * y)
                        .sum();
                }
            }
            // dB = Aᵀ · dC
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                let dcrow = &dc[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a.data()[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (d, &u) in db[p * n..(p + 1) * n].iter_mut().zip(dcrow) {
                        *d += av * u;
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(a.shape().to_vec(), da)),
                Some(Tensor::from_parts(b.shape().to_vec(), db)),
            ]
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                vec![Some(up.clone()), Some(up.clone())]
            } else {
                let cols = b.len();
                let mut db = vec![0.0; cols];
                for (i, v) in up.data().iter().enumerate() {
                    db[i % cols] += v;
                }
                vec![
                    Some(up.clone()),
                    Some(Tensor::from_parts(b.shape().to_vec(), db)),
                ]
            }
        }
        Op::Sub => vec![Some(up.clone()), Some(map(up, |x| -x))],
        Op::Mul => vec![
            Some(zip_map(up, inputs[1], |u, y| u * y)),
            Some(zip_map(up, inputs[0], |u, x| u * x)),
        ],
        Op::Concat => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let part = up.data()[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    Some(Tensor::from_parts(t.shape().to_vec(), part))
                })
                .collect()
        }
        Op::Dot => {
            let u = up.data()[0];
            vec![
                Some(map(inputs[1], |y| u * y)),
                Some(map(inputs[0], |x| u * x)),
            ]
        }
        Op::Sigmoid => vec![Some(zip_map(up, output, |u, s| u * s * (1.0 - s)))],
        Op::Tanh => vec![Some(zip_map(up, output, |u, t| u * (1.0 - t * t)))],
        Op::Relu => vec![Some(zip_map(
            up,
            inputs[0],
            |u, x| if x > 0.0 { u } else { 0.0 },
        ))],
        Op::Exp => vec![Some(zip_map(up, output, |u, e| u * e))],
        Op::Log => vec![Some(zip_map(up, inputs[0], |u, x| u / x))],
        Op::SoftmaxAxis(axis) => {
            let (outer, len, inner) = split_axis(output.shape(), *axis)?;
            let y = output.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let inner_prod: f64 = (0..len).map(|j| up.data()[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        dx[at(j)] = y[at(j)] * (up.data()[at(j)] - inner_prod);
                    }
                }
            }
            vec![Some(Tensor::from_parts(output.shape().to_vec(), dx))]
        }
        Op::MaxAxis(axis) => {
            let x = inputs[0];
            let (outer, len, inner) = split_axis(x.shape(), *axis)?;
            let arg = saved.ok_or_else(|| Error::Tape("max-axis node lost its argmax".into()))?;
            let mut dx = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let j = arg[o * inner + i];
                    dx[o * len * inner + j * inner + i] += up.data()[o * inner + i];
                }
            }
            vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))]
        }
        Op::SumAxis(axis) => {
            let x = inputs[0];
            let (outer, len, inner) = split_axis(x.shape(), *axis)?;
            let mut dx = vec![0.0; x.len()];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        dx[o * len * inner + j * inner + i] = up.data()[o * inner + i];
                    }
                }
            }
            vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))]
        }
        Op::Scale(c) => {
            let c = *c;
            vec![Some(map(up, |u| u * c))]
        }
        Op::Reshape(_) => vec![Some(Tensor::from_parts(
            inputs[0].shape().to_vec(),
            up.data().to_vec(),
        ))],
        Op::Clamp { lo, hi } => {
            vec![Some(zip_map(up, inputs[0], |u, x| {
                if x > *lo && x < *hi {
                    u
                } else {
                    0.0
                }
            }))]
        }
    };
    Ok(g)
}
