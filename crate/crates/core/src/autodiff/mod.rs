//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its forward value and
//! the indices of its parents. Because nodes are appended as they are created,
//! the node list is already in topological order and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! Ten primitives are supported (see [`Primitive`]). Everything else, the LSTM
//! cell and the loss included, is composed from them.
//!
//! ```
//! use sarnn_core::autodiff::Tape;
//! use sarnn_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let a = tape.param(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
//! let b = tape.constant(Tensor::from_rows(&[&[4.0, 5.0]]).unwrap());
//! let ab = tape.hadamard(a, b).unwrap();
//! let loss = tape.sum(ab).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(a).unwrap().data(), &[4.0, 5.0]);
//! ```
//!
//! Detachment is a property of the *reference*, not of the node: consuming a
//! [`NodeRef`] returned by [`NodeRef::detach`] uses the same forward value but
//! records an edge that backward never follows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub mod checks;
mod fd;

pub use fd::{finite_difference_grad, relative_error, REL_ERR_FLOOR};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Kind of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Param,
    Constant,
    MatMul,
    Add,
    Hadamard,
    Concat,
    Sigmoid,
    Tanh,
    Scale,
    Slice,
    Sum,
    Square,
}

impl OpKind {
    pub const PRIMITIVES: [OpKind; 10] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Hadamard,
        OpKind::Concat,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Scale,
        OpKind::Slice,
        OpKind::Sum,
        OpKind::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Param => "param",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Hadamard => "hadamard",
            OpKind::Concat => "concat",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Scale => "scale",
            OpKind::Slice => "slice",
            OpKind::Sum => "sum",
            OpKind::Square => "square",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::PRIMITIVES.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A primitive with its static arguments, for [`Tape::apply`].
///
/// `Concat` and `Slice` act on the first axis. `Sum` reduces to a `1 × 1`
/// tensor. `Add` and `Hadamard` require identical shapes (no broadcasting).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Hadamard,
    Concat,
    Sigmoid,
    Tanh,
    Scale(f64),
    Slice { start: usize, end: usize },
    Sum,
    Square,
}

impl Primitive {
    pub fn kind(&self) -> OpKind {
        match self {
            Primitive::MatMul => OpKind::MatMul,
            Primitive::Add => OpKind::Add,
            Primitive::Hadamard => OpKind::Hadamard,
            Primitive::Concat => OpKind::Concat,
            Primitive::Sigmoid => OpKind::Sigmoid,
            Primitive::Tanh => OpKind::Tanh,
            Primitive::Scale(_) => OpKind::Scale,
            Primitive::Slice { .. } => OpKind::Slice,
            Primitive::Sum => OpKind::Sum,
            Primitive::Square => OpKind::Square,
        }
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    tape: u64,
    index: usize,
    detached: bool,
}

impl NodeRef {
    pub fn index(self) -> usize {
        self.index
    }

    pub fn is_detached(self) -> bool {
        self.detached
    }

    /// Same forward value, no adjoint flow back through this reference.
    pub fn detach(self) -> NodeRef {
        NodeRef { detached: true, ..self }
    }

    /// The attached reference to the same node.
    pub fn attached(self) -> NodeRef {
        NodeRef { detached: false, ..self }
    }
}

#[derive(Debug, Clone, Copy)]
struct Parent {
    index: usize,
    /// Whether adjoint flows into this parent.
    live: bool,
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(Parent, Parent),
    Add(Parent, Parent),
    Hadamard(Parent, Parent),
    Concat(Vec<Parent>),
    Sigmoid(Parent),
    Tanh(Parent),
    Scale(Parent, f64),
    Slice(Parent, usize),
    Sum(Parent),
    Square(Parent),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Param => OpKind::Param,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Concat(_) => OpKind::Concat,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Scale(..) => OpKind::Scale,
            Op::Slice(..) => OpKind::Slice,
            Op::Sum(_) => OpKind::Sum,
            Op::Square(_) => OpKind::Square,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    /// Some parameter is reachable through live edges.
    needs_grad: bool,
}

/// Record of a computation, built once and differentiated any number of times.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::with_capacity(capacity),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fault-injection hook for the gradient checker: the adjoint leaving
    /// every node of `kind` is scaled by 1.5 during backward.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeRef {
        self.push(Op::Param, value, true)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeRef {
        self.push(Op::Constant, value, false)
    }

    pub fn value(&self, node: NodeRef) -> Result<&Tensor> {
        self.check(node)?;
        Ok(&self.nodes[node.index].value)
    }

    pub fn kind(&self, node: NodeRef) -> Result<OpKind> {
        self.check(node)?;
        Ok(self.nodes[node.index].op.kind())
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeRef {
        let index = self.nodes.len();
        self.nodes.push(Node { op, value, needs_grad });
        NodeRef { tape: self.id, index, detached: false }
    }

    fn check(&self, node: NodeRef) -> Result<()> {
        if node.tape != self.id || node.index >= self.nodes.len() {
            return Err(Error::ForeignNode);
        }
        Ok(())
    }

    fn parent(&self, node: NodeRef) -> Result<Parent> {
        self.check(node)?;
        Ok(Parent { index: node.index, live: !node.detached && self.nodes[node.index].needs_grad })
    }

    fn shape_err(&self, op: OpKind, inputs: &[NodeRef]) -> Error {
        Error::Shape {
            op: op.name(),
            shapes: inputs
                .iter()
                .map(|n| self.nodes.get(n.index).map(|x| x.value.shape().to_vec()).unwrap_or_default())
                .collect(),
        }
    }

    /// Records `prim` applied to `inputs`.
    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeRef]) -> Result<NodeRef> {
        let kind = prim.kind();
        for &n in inputs {
            self.check(n)?;
        }
        let arity_ok = match prim {
            Primitive::MatMul | Primitive::Add | Primitive::Hadamard => inputs.len() == 2,
            Primitive::Concat => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::Invalid(format!("{kind} takes a different number of inputs than {}", inputs.len())));
        }
        match prim {
            Primitive::MatMul => {
                let (a, b) = (&self.nodes[inputs[0].index].value, &self.nodes[inputs[1].index].value);
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(self.shape_err(kind, inputs));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = vec![0.0; m * n];
                matmul_into(a.data(), b.data(), &mut out, m, k, n);
                let value = Tensor::new(vec![m, n], out)?;
                self.binary(inputs, value, Op::MatMul)
            }
            Primitive::Add | Primitive::Hadamard => {
                let (a, b) = (&self.nodes[inputs[0].index].value, &self.nodes[inputs[1].index].value);
                if a.shape() != b.shape() {
                    return Err(self.shape_err(kind, inputs));
                }
                let data = if kind == OpKind::Add {
                    a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
                } else {
                    a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
                };
                let value = Tensor::new(a.shape().to_vec(), data)?;
                if kind == OpKind::Add {
                    self.binary(inputs, value, Op::Add)
                } else {
                    self.binary(inputs, value, Op::Hadamard)
                }
            }
            Primitive::Concat => {
                let first = &self.nodes[inputs[0].index].value;
                let trailing = first.shape().get(1..).unwrap_or(&[]).to_vec();
                let mut rows = 0;
                let mut data = Vec::new();
                for n in inputs {
                    let v = &self.nodes[n.index].value;
                    if v.shape().is_empty() || v.shape()[1..] != trailing[..] {
                        return Err(self.shape_err(kind, inputs));
                    }
                    rows += v.shape()[0];
                    data.extend_from_slice(v.data());
                }
                let mut shape = vec![rows];
                shape.extend_from_slice(&trailing);
                let value = Tensor::new(shape, data)?;
                let parents = inputs.iter().map(|&n| self.parent(n)).collect::<Result<Vec<_>>>()?;
                let needs = parents.iter().any(|p| p.live);
                Ok(self.push(Op::Concat(parents), value, needs))
            }
            Primitive::Slice { start, end } => {
                let a = &self.nodes[inputs[0].index].value;
                if a.shape().is_empty() || start >= end || end > a.shape()[0] {
                    return Err(Error::Shape {
                        op: "slice",
                        shapes: vec![a.shape().to_vec(), vec![start, end]],
                    });
                }
                let value = a.rows_range(start, end);
                let p = self.parent(inputs[0])?;
                Ok(self.push(Op::Slice(p, start), value, p.live))
            }
            Primitive::Sigmoid => self.unary(inputs[0], math::sigmoid, Op::Sigmoid),
            Primitive::Tanh => self.unary(inputs[0], math::tanh, Op::Tanh),
            Primitive::Square => self.unary(inputs[0], |x| x * x, Op::Square),
            Primitive::Scale(alpha) => {
                let p = self.parent(inputs[0])?;
                let value = self.nodes[p.index].value.map(|x| alpha * x);
                Ok(self.push(Op::Scale(p, alpha), value, p.live))
            }
            Primitive::Sum => {
                let p = self.parent(inputs[0])?;
                let total: f64 = self.nodes[p.index].value.data().iter().sum();
                Ok(self.push(Op::Sum(p), Tensor::scalar(total), p.live))
            }
        }
    }

    fn binary(&mut self, inputs: &[NodeRef], value: Tensor, make: fn(Parent, Parent) -> Op) -> Result<NodeRef> {
        let a = self.parent(inputs[0])?;
        let b = self.parent(inputs[1])?;
        Ok(self.push(make(a, b), value, a.live || b.live))
    }

    fn unary(&mut self, input: NodeRef, f: fn(f64) -> f64, make: fn(Parent) -> Op) -> Result<NodeRef> {
        let p = self.parent(input)?;
        let value = self.nodes[p.index].value.map(f);
        Ok(self.push(make(p), value, p.live))
    }

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn hadamard(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::Hadamard, &[a, b])
    }

    pub fn concat(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn sigmoid(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn scale(&mut self, a: NodeRef, alpha: f64) -> Result<NodeRef> {
        self.apply(Primitive::Scale(alpha), &[a])
    }

    /// Rows `start..end` of `a`.
    pub fn slice(&mut self, a: NodeRef, start: usize, end: usize) -> Result<NodeRef> {
        self.apply(Primitive::Slice { start, end }, &[a])
    }

    pub fn sum(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn square(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.apply(Primitive::Square, &[a])
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// The tape is not modified, so repeated calls give identical results.
    pub fn backward(&self, root: NodeRef) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        self.check(root)?;
        let root_value = &self.nodes[root.index].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !root.detached {
            adj[root.index] = Some(vec![1.0]);
        }

        for i in (0..=root.index).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param | Op::Constant) || !node.needs_grad {
                continue;
            }
            let Some(mut g) = adj[i].take() else { continue };
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.propagate(node, &g, &mut adj);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param))
            .map(|(i, n)| {
                let g = adj[i].take().unwrap_or_else(|| vec![0.0; n.value.len()]);
                (i, Tensor::new(n.value.shape().to_vec(), g).expect("adjoint shape"))
            })
            .collect();
        Ok(Gradients { tape: self.id, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let value = &self.nodes;
        match &node.op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&value[a.index].value, &value[b.index].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if a.live {
                    // dA = G · Bᵀ
                    let da = slot(adj, a.index, m * k);
                    if n == 1 {
                        for (row, &gi) in da.chunks_exact_mut(k).zip(g) {
                            if gi != 0.0 {
                                for (d, bp) in row.iter_mut().zip(bv.data()) {
                                    *d += gi * bp;
                                }
                            }
                        }
                    } else {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                let row = &mut da[i * k..(i + 1) * k];
                                for (p, d) in row.iter_mut().enumerate() {
                                    *d += gij * bv.data()[p * n + j];
                                }
                            }
                        }
                    }
                }
                if b.live {
                    // dB = Aᵀ · G
                    let db = slot(adj, b.index, k * n);
                    if n == 1 {
                        for (arow, &gi) in av.data().chunks_exact(k).zip(g) {
                            if gi != 0.0 {
                                for (d, ap) in db.iter_mut().zip(arow) {
                                    *d += ap * gi;
                                }
                            }
                        }
                    } else {
                        for i in 0..m {
                            let arow = &av.data()[i * k..(i + 1) * k];
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for (p, &aip) in arow.iter().enumerate() {
                                    db[p * n + j] += aip * gij;
                                }
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if p.live {
                        add_into(slot(adj, p.index, g.len()), g);
                    }
                }
            }
            Op::Hadamard(a, b) => {
                if a.live {
                    let other = value[b.index].value.data();
                    let d = slot(adj, a.index, g.len());
                    for ((d, gi), o) in d.iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
                if b.live {
                    let other = value[a.index].value.data();
                    let d = slot(adj, b.index, g.len());
                    for ((d, gi), o) in d.iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
            }
            Op::Concat(parents) => {
                let mut offset = 0;
                for p in parents {
                    let len = value[p.index].value.len();
                    if p.live {
                        add_into(slot(adj, p.index, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Sigmoid(p) => {
                if p.live {
                    let y = node.value.data();
                    let d = slot(adj, p.index, g.len());
                    for ((d, gi), s) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(p) => {
                if p.live {
                    let y = node.value.data();
                    let d = slot(adj, p.index, g.len());
                    for ((d, gi), t) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - t * t);
                    }
                }
            }
            Op::Scale(p, alpha) => {
                if p.live {
                    let d = slot(adj, p.index, g.len());
                    for (d, gi) in d.iter_mut().zip(g) {
                        *d += alpha * gi;
                    }
                }
            }
            Op::Slice(p, start) => {
                if p.live {
                    let src = &value[p.index].value;
                    let offset = start * src.row_len();
                    let d = slot(adj, p.index, src.len());
                    add_into(&mut d[offset..offset + g.len()], g);
                }
            }
            Op::Sum(p) => {
                if p.live {
                    let n = value[p.index].value.len();
                    let d = slot(adj, p.index, n);
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Square(p) => {
                if p.live {
                    let x = value[p.index].value.data();
                    let d = slot(adj, p.index, g.len());
                    for ((d, gi), xi) in d.iter_mut().zip(g).zip(x) {
                        *d += 2.0 * xi * gi;
                    }
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], index: usize, len: usize) -> &mut [f64] {
    adj[index].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out = a · b` for row-major `a: m×k`, `b: k×n`.
///
/// Each output entry is accumulated in four interleaved partial sums
/// (`p mod 4`) combined as `(s0 + s1) + (s2 + s3)`, then the tail. The
/// tape-free LSTM path calls the same routine, so both agree bit for bit.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for (o, arow) in out.iter_mut().zip(a.chunks_exact(k)) {
            *o = dot4(arow, b);
        }
        return;
    }
    let mut col = vec![0.0; k];
    for j in 0..n {
        for (p, c) in col.iter_mut().enumerate() {
            *c = b[p * n + j];
        }
        for (i, arow) in a.chunks_exact(k).enumerate().take(m) {
            out[i * n + j] = dot4(arow, &col);
        }
    }
}

#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b[..a.len()].chunks_exact(4));
    let (at, bt) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for (x, y) in at.iter().zip(bt) {
        acc += x * y;
    }
    acc
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    params: Vec<(usize, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to a parameter node; zeros when no adjoint reached it.
    pub fn wrt(&self, param: NodeRef) -> Result<&Tensor> {
        if param.tape != self.tape {
            return Err(Error::ForeignNode);
        }
        self.params
            .iter()
            .find(|(i, _)| *i == param.index)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Invalid(format!("node {} is not a parameter", param.index)))
    }

    /// Moves the gradient of `param` out, leaving zeros behind.
    pub fn take(&mut self, param: NodeRef) -> Result<Tensor> {
        if param.tape != self.tape {
            return Err(Error::ForeignNode);
        }
        let entry = self
            .params
            .iter_mut()
            .find(|(i, _)| *i == param.index)
            .ok_or_else(|| Error::Invalid(format!("node {} is not a parameter", param.index)))?;
        let zeros = Tensor::zeros(entry.1.shape());
        Ok(core::mem::replace(&mut entry.1, zeros))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.params.iter().map(|(i, t)| (*i, t))
    }
}
