//! Define-by-run computation graph.
//!
//! Nodes are appended in creation order, which is always a valid topological
//! order because an op can only reference nodes that already exist. Values are
//! computed eagerly on construction; [`Graph::forward`] recomputes them after
//! inputs have been reassigned.

use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::{AutodiffError, Tensor};

/// Floor applied inside [`Op::Log`] so that `ln(0)` stays finite.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input,
    Parameter(ParamId),
    /// Matrix times vector, or matrix times matrix.
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Sum(NodeId),
    Scale(NodeId, f64),
    Log(NodeId),
    Neg(NodeId),
    /// Row of a matrix, or element of a vector.
    Select(NodeId, usize),
    /// Contiguous range `[start, start + len)` of a vector.
    Slice(NodeId, usize, usize),
    /// Stacks equal-length vectors as the columns of a matrix.
    Columns(Vec<NodeId>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter(_) => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "elementwise-multiply",
            Op::Concat(_) => "concat",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scalar-scale",
            Op::Log(_) => "log",
            Op::Neg(_) => "negate",
            Op::Select(..) => "select-row",
            Op::Slice(..) => "slice",
            Op::Columns(_) => "columns",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Parameter(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(xs) | Op::Columns(xs) => xs.clone(),
            Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Scale(a, _)
            | Op::Log(a)
            | Op::Neg(a)
            | Op::Select(a, _)
            | Op::Slice(a, ..) => vec![*a],
        }
    }
}

/// A computation graph borrowing a parameter store.
///
/// Parameter nodes read their value straight from the store, so building a
/// graph never copies weights.
pub struct Graph<'p> {
    params: &'p ParamStore,
    ops: Vec<Op>,
    values: Vec<Tensor>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            ops: Vec::new(),
            values: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.ops[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.ops[id.0] {
            Op::Parameter(p) => self.params.value(*p),
            _ => &self.values[id.0],
        }
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.ops.push(Op::Input);
        self.values.push(value);
        NodeId(self.ops.len() - 1)
    }

    /// Replaces the value of an input node. Call [`Graph::forward`] to
    /// propagate the change.
    pub fn set_input(&mut self, id: NodeId, value: Tensor) -> Result<(), AutodiffError> {
        if !matches!(self.ops[id.0], Op::Input) {
            return Err(AutodiffError::NotAnInput(id.0));
        }
        if self.values[id.0].shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set-input",
                left: id.0,
                left_shape: self.values[id.0].shape().to_vec(),
                right: id.0,
                right_shape: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Node for a registered parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.ops.push(Op::Parameter(id));
        self.values.push(Tensor::zeros(&[0]));
        let node = NodeId(self.ops.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    fn push(&mut self, op: Op) -> Result<NodeId, AutodiffError> {
        let value = self.eval(&op)?;
        self.ops.push(op);
        self.values.push(value);
        Ok(NodeId(self.ops.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Mul(a, b))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Softmax(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Sum(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        self.push(Op::Scale(a, factor))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Log(a))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Neg(a))
    }

    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        self.push(Op::Select(a, index))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        self.push(Op::Slice(a, start, len))
    }

    pub fn columns(&mut self, cols: &[NodeId]) -> Result<NodeId, AutodiffError> {
        self.push(Op::Columns(cols.to_vec()))
    }

    /// `Σ x` over a list of same-shaped nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let (&first, rest) = terms.split_first().ok_or(AutodiffError::EmptyOperands("add"))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            left: a.0,
            left_shape: self.value(a).shape().to_vec(),
            right: b.0,
            right_shape: self.value(b).shape().to_vec(),
        }
    }

    fn check_exists(&self, ids: &[NodeId]) -> Result<(), AutodiffError> {
        for id in ids {
            if id.0 >= self.ops.len() {
                return Err(AutodiffError::UnknownNode(id.0));
            }
        }
        Ok(())
    }

    fn eval(&self, op: &Op) -> Result<Tensor, AutodiffError> {
        self.check_exists(&op.parents())?;
        let out = match op {
            Op::Input | Op::Parameter(_) => unreachable!("leaf nodes are not evaluated"),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if !ta.is_matrix() || ta.cols() != tb.rows() || tb.rank() > 2 {
                    return Err(self.mismatch("matmul", *a, *b));
                }
                let (r, inner) = (ta.rows(), ta.cols());
                if tb.is_vector() {
                    let x = tb.data();
                    let mut out = Vec::with_capacity(r);
                    for i in 0..r {
                        out.push(ta.row(i).iter().zip(x).map(|(w, v)| w * v).sum());
                    }
                    Tensor::vector(out)
                } else {
                    let k = tb.cols();
                    let mut out = Tensor::zeros(&[r, k]);
                    for i in 0..r {
                        for j in 0..inner {
                            let aij = ta.get(i, j);
                            if aij == 0.0 {
                                continue;
                            }
                            let brow = tb.row(j);
                            for (o, bv) in out.row_mut(i).iter_mut().zip(brow) {
                                *o += aij * bv;
                            }
                        }
                    }
                    out
                }
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if ta.shape() != tb.shape() {
                    return Err(self.mismatch(op.name(), *a, *b));
                }
                let data = if matches!(op, Op::Add(..)) {
                    ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
                } else {
                    ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect()
                };
                Tensor::new(ta.shape().to_vec(), data)?
            }
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(AutodiffError::EmptyOperands("concat"));
                }
                let mut data = Vec::new();
                for p in parts {
                    let t = self.value(*p);
                    if !t.is_vector() {
                        return Err(self.mismatch("concat", *p, parts[0]));
                    }
                    data.extend_from_slice(t.data());
                }
                Tensor::vector(data)
            }
            Op::Sigmoid(a) => self.value(*a).map(sigmoid),
            Op::Tanh(a) => self.value(*a).map(f64::tanh),
            Op::Softmax(a) => {
                let t = self.value(*a);
                if !t.is_vector() || t.is_empty() {
                    return Err(self.mismatch("softmax", *a, *a));
                }
                let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                Tensor::vector(exps.into_iter().map(|e| e / total).collect())
            }
            Op::Sum(a) => Tensor::scalar(self.value(*a).data().iter().sum()),
            Op::Scale(a, f) => self.value(*a).map(|v| v * f),
            Op::Log(a) => self.value(*a).map(|v| v.max(LOG_FLOOR).ln()),
            Op::Neg(a) => self.value(*a).map(|v| -v),
            Op::Select(a, idx) => {
                let t = self.value(*a);
                match t.rank() {
                    1 if *idx < t.len() => Tensor::scalar(t.data()[*idx]),
                    2 if *idx < t.rows() => Tensor::vector(t.row(*idx).to_vec()),
                    _ => {
                        return Err(AutodiffError::IndexOutOfRange {
                            node: a.0,
                            index: *idx,
                            shape: t.shape().to_vec(),
                        })
                    }
                }
            }
            Op::Slice(a, start, len) => {
                let t = self.value(*a);
                if !t.is_vector() || start + len > t.len() {
                    return Err(AutodiffError::IndexOutOfRange {
                        node: a.0,
                        index: start + len,
                        shape: t.shape().to_vec(),
                    });
                }
                Tensor::vector(t.data()[*start..start + len].to_vec())
            }
            Op::Columns(cols) => {
                let first = *cols.first().ok_or(AutodiffError::EmptyOperands("columns"))?;
                let n = self.value(first).len();
                let l = cols.len();
                let mut out = Tensor::zeros(&[n, l]);
                for (j, c) in cols.iter().enumerate() {
                    let t = self.value(*c);
                    if !t.is_vector() || t.len() != n {
                        return Err(self.mismatch("columns", first, *c));
                    }
                    for (i, v) in t.data().iter().enumerate() {
                        out.data_mut()[i * l + j] = *v;
                    }
                }
                out
            }
        };
        Ok(out)
    }

    /// Recomputes every derived node in topological order.
    pub fn forward(&mut self) -> Result<(), AutodiffError> {
        for i in 0..self.ops.len() {
            if matches!(self.ops[i], Op::Input | Op::Parameter(_)) {
                continue;
            }
            let value = self.eval(&self.ops[i])?;
            self.values[i] = value;
        }
        Ok(())
    }

    /// First node (in topological order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        (0..self.ops.len())
            .map(NodeId)
            .find(|&id| !self.value(id).all_finite())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        self.check_exists(&[loss])?;
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                node: loss.0,
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], node: NodeId, contrib: Tensor) {
        match &mut grads[node.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        node: NodeId,
        f: impl FnOnce(&mut Tensor),
    ) {
        let slot = &mut grads[node.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(node).shape()));
        }
        f(slot.as_mut().expect("initialized above"));
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.values[i];
        match &self.ops[i] {
            Op::Input | Op::Parameter(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, inner) = (ta.rows(), ta.cols());
                if tb.is_vector() {
                    let x = tb.data();
                    let gd = g.data();
                    self.accumulate_with(grads, *a, |ga| {
                        for (row, &gi) in gd.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            for (w, xv) in ga.row_mut(row).iter_mut().zip(x) {
                                *w += gi * xv;
                            }
                        }
                    });
                    self.accumulate_with(grads, *b, |gb| {
                        let gbd = gb.data_mut();
                        for (row, &gi) in gd.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            for (acc, w) in gbd.iter_mut().zip(ta.row(row)) {
                                *acc += gi * w;
                            }
                        }
                    });
                } else {
                    let k = tb.cols();
                    // dA = G Bᵀ, dB = Aᵀ G
                    self.accumulate_with(grads, *a, |ga| {
                        for row in 0..r {
                            for j in 0..inner {
                                let mut acc = 0.0;
                                for c in 0..k {
                                    acc += g.get(row, c) * tb.get(j, c);
                                }
                                ga.data_mut()[row * inner + j] += acc;
                            }
                        }
                    });
                    self.accumulate_with(grads, *b, |gb| {
                        for j in 0..inner {
                            for c in 0..k {
                                let mut acc = 0.0;
                                for row in 0..r {
                                    acc += ta.get(row, j) * g.get(row, c);
                                }
                                gb.data_mut()[j * k + c] += acc;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga: Vec<f64> = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                let shape = ta.shape().to_vec();
                self.accumulate(grads, *a, Tensor::new(shape.clone(), ga).expect("same shape"));
                self.accumulate(grads, *b, Tensor::new(shape, gb).expect("same shape"));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let piece = Tensor::vector(g.data()[offset..offset + len].to_vec());
                    self.accumulate(grads, *p, piece);
                    offset += len;
                }
            }
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::Tanh(a) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), d).expect("shape"));
            }
            Op::Softmax(a) => {
                let dot: f64 = g.data().iter().zip(out.data()).map(|(x, y)| x * y).sum();
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| y * (gv - dot)).collect();
                self.accumulate(grads, *a, Tensor::vector(d));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::filled(&shape, g.item()));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::Log(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > LOG_FLOOR { gv / xv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d).expect("shape"));
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|v| -v)),
            Op::Select(a, idx) => {
                let rank = self.value(*a).rank();
                self.accumulate_with(grads, *a, |ga| {
                    if rank == 1 {
                        ga.data_mut()[*idx] += g.item();
                    } else {
                        for (dst, src) in ga.row_mut(*idx).iter_mut().zip(g.data()) {
                            *dst += src;
                        }
                    }
                });
            }
            Op::Slice(a, start, len) => {
                self.accumulate_with(grads, *a, |ga| {
                    for (dst, src) in ga.data_mut()[*start..start + len].iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                });
            }
            Op::Columns(cols) => {
                let l = cols.len();
                for (j, c) in cols.iter().enumerate() {
                    let n = self.value(*c).len();
                    let col = (0..n).map(|row| g.data()[row * l + j]).collect();
                    self.accumulate(grads, *c, Tensor::vector(col));
                }
            }
        }
    }

    /// Adds the gradients of every parameter node into `out`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut ParamGrads) {
        for (&pid, &node) in &self.param_nodes {
            if let Some(g) = grads.get(node) {
                out.get_mut(pid).add_assign(g);
            }
        }
    }
}

/// Per-node gradients of one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}
