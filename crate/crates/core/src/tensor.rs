//! Dense `f64` tensors with a dynamic reverse-mode tape and an Adam optimizer.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output and whatever it needs for the backward rule;
//! [`Graph::backward`] then walks the tape in reverse. Trainable weights live
//! in a [`ParamStore`] and are copied into a graph with [`Graph::param`];
//! after a backward pass [`ParamStore::accumulate_grads`] folds the graph's
//! parameter gradients back into the store.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Lower/upper clamp applied to predictions inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Builds a row-major matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            values.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    /// Replaces an existing gradient with zeros; absent gradients stay absent.
    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    /// Size of the leading dimension (1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.values.len() == 1 {
            Ok(self.values[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        tensor.set_requires_grad(true);
        self.entries.push((name.into(), tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &str, &mut Tensor)> {
        self.entries
            .iter_mut()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds the gradients that `graph` computed for loaded parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        for node in &graph.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, node.value.grad()) {
                self.entries[id.0].1.accumulate_grad(g);
            }
        }
    }

    /// Adds `other`'s gradients into this store (entries must align).
    pub fn accumulate_grads_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(invalid("parameter stores do not align"));
        }
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            if let Some(g) = src.grad() {
                dst.accumulate_grad(g);
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    pub fn clear_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.clear_grad());
    }
}

/// Pointwise operations accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Sigmoid,
    Scale(f64),
}

/// Reductions accepted by [`Graph::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Reduce {
        input: Var,
        kind: Reduce,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    BceElem(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Reduce { .. } => "reduce",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Reshape(_) => "reshape",
            Op::BceElem(..) => "bce",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBias(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::GatherRows(a, _)
            | Op::Reshape(a)
            | Op::BceElem(a, _) => vec![*a],
            Op::Reduce { input, .. } => vec![*input],
            Op::ConcatCols(vs) => vs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Structural cost of the operations recorded so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpStats {
    pub nodes: u64,
    pub flops: u64,
}

/// Tape of executed operations, in topological order by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    flops: u64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `out[r×t] += a[r×s] · b[s×t]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], r: usize, s: usize, t: usize) {
    for i in 0..r {
        let out_row = &mut out[i * t..(i + 1) * t];
        let a_row = &a[i * s..(i + 1) * s];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * t..(k + 1) * t];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn transpose_values(v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v[r * cols + c];
        }
    }
    out
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
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

    pub fn stats(&self) -> OpStats {
        OpStats {
            nodes: self.nodes.len() as u64,
            flops: self.flops,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, flops: usize) -> Var {
        self.flops += flops as u64;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn values(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Records a leaf. It receives gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, 0)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    /// Copies a stored parameter into the graph as a gradient-tracking leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let src = store.get(id);
        let mut t = Tensor::new(src.shape.clone(), src.values.clone())
            .expect("stored parameter has a consistent shape");
        t.set_requires_grad(true);
        self.push(t, Op::Param(id), 0)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                left: s.to_vec(),
                right: Vec::new(),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, s) = self.matrix_dims("matmul", a)?;
        let (s2, t) = self.matrix_dims("matmul", b)?;
        if s != s2 {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; r * t];
        gemm_acc(self.values(a), self.values(b), &mut out, r, s, t);
        let value = Tensor::matrix(r, t, out)?;
        Ok(self.push(value, Op::MatMul(a, b), 2 * r * s * t))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let out = transpose_values(self.values(a), r, c);
        let value = Tensor::matrix(c, r, out)?;
        Ok(self.push(value, Op::Transpose(a), r * c))
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let n = out.len();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, op, n))
    }

    fn map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.values(a).iter().map(|&x| f(x)).collect();
        let n = out.len();
        let value = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        self.push(value, op, n)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(Op::Scale(a, s), a, |x| s * x)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(Op::Relu(a), a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(Op::Tanh(a), a, libm::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(Op::Sigmoid(a), a, sigmoid)
    }

    /// Dispatches one of the pointwise operations on its operands.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(invalid("elementwise: wrong number of operands"));
        }
        match op {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Sub => self.sub(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Relu => Ok(self.relu(inputs[0])),
            Elementwise::Tanh => Ok(self.tanh(inputs[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(inputs[0])),
            Elementwise::Scale(s) => Ok(self.scale(inputs[0], s)),
        }
    }

    /// Adds a length-C bias to every row of an R×C matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("add_bias", a)?;
        if self.value(bias).len() != c {
            return Err(Error::Shape {
                op: "add_bias",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.values(bias);
        let mut out = self.values(a).to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(value, Op::AddBias(a, bias), r * c))
    }

    /// Reduces along `axis`, dropping it from the shape.
    pub fn reduce(&mut self, kind: Reduce, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        if len == 0 {
            return Err(invalid("reduce over an empty axis"));
        }
        let src = self.values(a);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match kind {
            Reduce::Sum | Reduce::Mean => {
                for o in 0..outer {
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        dst.iter_mut()
                            .zip(&src[base..base + inner])
                            .for_each(|(d, s)| *d += s);
                    }
                }
                if kind == Reduce::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|x| *x *= inv);
                }
            }
            Reduce::Max => {
                argmax = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = src[o * len * inner + i];
                        let mut at = 0;
                        for l in 1..len {
                            let v = src[(o * len + l) * inner + i];
                            // strict: ties keep the first index
                            if v > best {
                                best = v;
                                at = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = at;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        let op = Op::Reduce {
            input: a,
            kind,
            outer,
            len,
            inner,
            argmax,
        };
        Ok(self.push(value, op, outer * len * inner))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Mean, a, axis)
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Max, a, axis)
    }

    /// `min(x) = -max(-x)`; ties route to the first index as with `max`.
    pub fn min(&mut self, a: Var, axis: usize) -> Result<Var> {
        let neg = self.scale(a, -1.0);
        let m = self.max(neg, axis)?;
        Ok(self.scale(m, -1.0))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, vec![n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, vec![n])?;
        self.mean(flat, 0)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(a).to_vec(),
                right: shape,
            });
        }
        let value = Tensor::new(shape, self.values(a).to_vec())?;
        Ok(self.push(value, Op::Reshape(a), 0))
    }

    /// Selects rows (leading-axis slices); duplicates are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(invalid("gather_rows on a scalar"));
        }
        let rows = t.rows();
        let cols = t.cols();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, len: rows });
            }
            out.extend_from_slice(&t.values[i * cols..(i + 1) * cols]);
        }
        let mut shape = t.shape.clone();
        shape[0] = idx.len();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), idx.len() * cols))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let (rows, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values(p)[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rows * total))
    }

    /// Elementwise binary cross-entropy against a constant target, with the
    /// prediction clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_elem(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        if self.value(pred).len() != target.len() {
            return Err(Error::Shape {
                op: "bce",
                left: self.shape(pred).to_vec(),
                right: vec![target.len()],
            });
        }
        let out: Vec<f64> = self
            .values(pred)
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p))
            })
            .collect();
        let n = out.len();
        let value = Tensor::new(self.shape(pred).to_vec(), out)?;
        Ok(self.push(value, Op::BceElem(pred, target.to_vec()), 4 * n))
    }

    /// Mean binary cross-entropy over all elements.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let e = self.bce_elem(pred, target)?;
        self.mean_all(e)
    }

    /// Per-row mean binary cross-entropy of an R×N prediction.
    pub fn bce_rows(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let (r, n) = self.matrix_dims("bce_rows", pred)?;
        let e = self.bce_elem(pred, target)?;
        let e = self.reshape(e, vec![r, n])?;
        self.mean(e, 1)
    }

    /// Back-propagates from a scalar node. Leaves and parameters that require
    /// gradients accumulate `d loss / d leaf` into their gradient slot.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let out = self.value(loss);
        if out.len() != 1 {
            return Err(Error::NotScalar(out.shape.clone()));
        }
        let n = loss.0 + 1;
        let mut needs = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            needs[i] = match node.op {
                Op::Leaf | Op::Param(_) => node.value.requires_grad,
                ref op => op.inputs().iter().any(|v| needs[v.0]),
            };
        }
        if !needs[loss.0] {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &needs, &mut adj);
        }
        for (i, g) in adj.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[i];
                if matches!(node.op, Op::Leaf | Op::Param(_)) && node.value.requires_grad {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], needs: &[bool], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.values();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (r, s) = (self.shape(*a)[0], self.shape(*a)[1]);
                let t = self.shape(*b)[1];
                if needs[a.0] {
                    // g · bᵀ
                    let bv = self.values(*b);
                    let mut ga = vec![0.0; r * s];
                    for row in 0..r {
                        let g_row = &g[row * t..(row + 1) * t];
                        for k in 0..s {
                            ga[row * s + k] = dot(g_row, &bv[k * t..(k + 1) * t]);
                        }
                    }
                    add_into(&mut adj[a.0], &ga);
                }
                if needs[b.0] {
                    // aᵀ · g
                    let av = self.values(*a);
                    let mut gb = vec![0.0; s * t];
                    for row in 0..r {
                        let g_row = &g[row * t..(row + 1) * t];
                        for k in 0..s {
                            let aik = av[row * s + k];
                            if aik == 0.0 {
                                continue;
                            }
                            gb[k * t..(k + 1) * t]
                                .iter_mut()
                                .zip(g_row)
                                .for_each(|(o, &gv)| *o += aik * gv);
                        }
                    }
                    add_into(&mut adj[b.0], &gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let ga = transpose_values(g, c, r);
                add_into(&mut adj[a.0], &ga);
            }
            Op::Add(a, b) => {
                if needs[a.0] {
                    add_into(&mut adj[a.0], g);
                }
                if needs[b.0] {
                    add_into(&mut adj[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs[a.0] {
                    add_into(&mut adj[a.0], g);
                }
                if needs[b.0] {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut adj[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if needs[a.0] {
                    let ga: Vec<f64> = g.iter().zip(self.values(*b)).map(|(x, y)| x * y).collect();
                    add_into(&mut adj[a.0], &ga);
                }
                if needs[b.0] {
                    let gb: Vec<f64> = g.iter().zip(self.values(*a)).map(|(x, y)| x * y).collect();
                    add_into(&mut adj[b.0], &gb);
                }
            }
            Op::Scale(a, s) => {
                let ga: Vec<f64> = g.iter().map(|x| s * x).collect();
                add_into(&mut adj[a.0], &ga);
            }
            Op::AddBias(a, b) => {
                if needs[a.0] {
                    add_into(&mut adj[a.0], g);
                }
                if needs[b.0] {
                    let c = self.value(*b).len();
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                    add_into(&mut adj[b.0], &gb);
                }
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.values(*a))
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                add_into(&mut adj[a.0], &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                add_into(&mut adj[a.0], &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                add_into(&mut adj[a.0], &ga);
            }
            Op::Reduce {
                input,
                kind,
                outer,
                len,
                inner,
                argmax,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut ga = vec![0.0; outer * len * inner];
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let f = if *kind == Reduce::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for l in 0..len {
                                let base = (o * len + l) * inner;
                                ga[base..base + inner]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, s)| *d = f * s);
                            }
                        }
                    }
                    Reduce::Max => {
                        for o in 0..outer {
                            for i in 0..inner {
                                let l = argmax[o * inner + i];
                                ga[(o * len + l) * inner + i] = g[o * inner + i];
                            }
                        }
                    }
                }
                add_into(&mut adj[input.0], &ga);
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let cols = src.cols();
                let slot = adj[a.0].get_or_insert_with(|| vec![0.0; src.len()]);
                for (k, &r) in idx.iter().enumerate() {
                    slot[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[k * cols..(k + 1) * cols])
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if needs[p.0] {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        add_into(&mut adj[p.0], &gp);
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => add_into(&mut adj[a.0], g),
            Op::BceElem(a, target) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.values(*a))
                    .zip(target)
                    .map(|((gv, &p), &t)| {
                        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                            0.0
                        } else {
                            gv * (-t / p + (1.0 - t) / (1.0 - p))
                        }
                    })
                    .collect();
                add_into(&mut adj[a.0], &ga);
            }
        }
    }
}

/// Adam moments and hyperparameters, one moment buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.m[id.0]
    }

    pub fn second_moment(&self, id: ParamId) -> &[f64] {
        &self.v[id.0]
    }
}

/// One bias-corrected Adam update over every parameter, then zeroes the
/// gradients. Fails before touching anything if a gradient is missing.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(invalid("optimizer state does not match the parameter store"));
    }
    if let Some((_, name, _)) = params.iter().find(|(_, _, t)| t.grad().is_none()) {
        return Err(Error::MissingGradient(name.into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(state.beta1, t);
    let bc2 = 1.0 - libm::pow(state.beta2, t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (id, _, tensor) in params.iter_mut() {
        let grad = tensor.grad.take().expect("checked above");
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        for (k, (w, &g)) in tensor.values.iter_mut().zip(&grad).enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        tensor.grad = Some(vec![0.0; grad.len()]);
    }
    Ok(())
}
