use std::collections::HashMap;

use crate::autodiff::tensor::numel;
use crate::autodiff::{AutodiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it, and only until that tape is cleared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Tape::record`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Hadamard,
    Add,
    Sub,
    Scale,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    Concat,
    Slice,
    Transpose,
    AddBias,
    Abs,
    Powf,
    Reshape,
    UnflattenUpper,
    LogSoftmax,
}

/// An operation kind together with its non-tensor arguments.
#[derive(Clone, Debug, PartialEq)]
pub enum OpSpec<T> {
    /// `[n, k] x [k, m] -> [n, m]`
    MatMul,
    Hadamard,
    Add,
    Sub,
    Scale(T),
    Relu,
    Sigmoid,
    Exp,
    Log,
    Square,
    /// Sum of all elements, scalar output.
    Sum,
    /// Mean of all elements, scalar output.
    Mean,
    /// Concatenation along the leading axis.
    Concat,
    /// Rows `start..end` along the leading axis.
    Slice { start: usize, end: usize },
    /// Two-dimensional transpose.
    Transpose,
    /// `[n, m] + [m]`, bias broadcast over rows.
    AddBias,
    Abs,
    Powf(T),
    Reshape(Vec<usize>),
    /// Edge vector of length `k(k-1)/2` (or `[1, E]`) to a symmetric `[k, k]`
    /// matrix with zero diagonal, using the canonical `(i, j), i < j` order.
    UnflattenUpper(usize),
    /// Row-wise log-softmax over the last axis.
    LogSoftmax,
}

impl<T> OpSpec<T> {
    pub fn kind(&self) -> OpKind {
        match self {
            OpSpec::MatMul => OpKind::MatMul,
            OpSpec::Hadamard => OpKind::Hadamard,
            OpSpec::Add => OpKind::Add,
            OpSpec::Sub => OpKind::Sub,
            OpSpec::Scale(_) => OpKind::Scale,
            OpSpec::Relu => OpKind::Relu,
            OpSpec::Sigmoid => OpKind::Sigmoid,
            OpSpec::Exp => OpKind::Exp,
            OpSpec::Log => OpKind::Log,
            OpSpec::Square => OpKind::Square,
            OpSpec::Sum => OpKind::Sum,
            OpSpec::Mean => OpKind::Mean,
            OpSpec::Concat => OpKind::Concat,
            OpSpec::Slice { .. } => OpKind::Slice,
            OpSpec::Transpose => OpKind::Transpose,
            OpSpec::AddBias => OpKind::AddBias,
            OpSpec::Abs => OpKind::Abs,
            OpSpec::Powf(_) => OpKind::Powf,
            OpSpec::Reshape(_) => OpKind::Reshape,
            OpSpec::UnflattenUpper(_) => OpKind::UnflattenUpper,
            OpSpec::LogSoftmax => OpKind::LogSoftmax,
        }
    }

    fn name(&self) -> &'static str {
        match self.kind() {
            OpKind::MatMul => "matmul",
            OpKind::Hadamard => "hadamard",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Transpose => "transpose",
            OpKind::AddBias => "add_bias",
            OpKind::Abs => "abs",
            OpKind::Powf => "powf",
            OpKind::Reshape => "reshape",
            OpKind::UnflattenUpper => "unflatten_upper",
            OpKind::LogSoftmax => "log_softmax",
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    spec: Option<OpSpec<T>>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the leaves that required them.
///
/// Leaves that the loss does not depend on have no entry.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    by_leaf: HashMap<Var, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.by_leaf.get(&var).map(Vec::as_slice)
    }

    /// Sums the gradient for `var` into `tensor`. Returns whether one existed.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor<T>) -> Result<bool, AutodiffError> {
        match self.by_leaf.get(&var) {
            Some(g) => {
                tensor.accumulate_grad(g)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument { op, msg: msg.into() }
}

/// Number of rows when a tensor is viewed along its leading axis.
fn leading(shape: &[usize]) -> usize {
    shape.first().copied().unwrap_or(1)
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Number of unordered off-diagonal pairs of a `k x k` matrix.
pub(crate) fn edge_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, spec: Option<OpSpec<T>>, inputs: Vec<Var>, rg: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            spec,
            inputs,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `tensor` as a leaf, inheriting its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            None,
            Vec::new(),
            tensor.requires_grad(),
        )
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Var, AutodiffError> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    pub fn scalar_constant(&mut self, value: T) -> Var {
        self.push(Vec::new(), vec![value], None, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded node is well formed")
    }

    /// Records `spec` applied to `inputs`, evaluating the forward value eagerly.
    pub fn record(&mut self, spec: OpSpec<T>, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let op = spec.name();
        let arity = match spec.kind() {
            OpKind::MatMul | OpKind::Hadamard | OpKind::Add | OpKind::Sub | OpKind::AddBias => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        };
        match arity {
            Some(n) if inputs.len() != n => {
                return Err(invalid(op, format!("expected {n} inputs, got {}", inputs.len())))
            }
            None if inputs.is_empty() => return Err(invalid(op, "no inputs")),
            _ => {}
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(invalid(op, format!("unknown variable {}", bad.0)));
        }
        let (shape, value) = self.forward(&spec, inputs)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(shape, value, Some(spec), inputs.to_vec(), rg))
    }

    fn forward(&self, spec: &OpSpec<T>, inputs: &[Var]) -> Result<(Vec<usize>, Vec<T>), AutodiffError> {
        let op = spec.name();
        let a = &self.nodes[inputs[0].0];
        let unary = |f: &dyn Fn(T) -> T| (a.shape.clone(), a.value.iter().map(|&x| f(x)).collect());
        Ok(match spec {
            OpSpec::MatMul => {
                let b = &self.nodes[inputs[1].0];
                if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                    return Err(mismatch(op, &a.shape, &b.shape));
                }
                let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
                (vec![n, m], matmul_raw(&a.value, &b.value, n, k, m))
            }
            OpSpec::Hadamard | OpSpec::Add | OpSpec::Sub => {
                let b = &self.nodes[inputs[1].0];
                if a.shape != b.shape {
                    return Err(mismatch(op, &a.shape, &b.shape));
                }
                let f: fn(T, T) -> T = match spec {
                    OpSpec::Hadamard => |x, y| x * y,
                    OpSpec::Add => |x, y| x + y,
                    _ => |x, y| x - y,
                };
                let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
                (a.shape.clone(), v)
            }
            OpSpec::Scale(c) => unary(&|x| x * *c),
            OpSpec::Relu => unary(&|x| if x > T::zero() { x } else { T::zero() }),
            OpSpec::Sigmoid => unary(&sigmoid),
            OpSpec::Exp => unary(&|x| x.exp()),
            OpSpec::Log => unary(&|x| x.ln()),
            OpSpec::Square => unary(&|x| x * x),
            OpSpec::Abs => unary(&|x| x.abs()),
            OpSpec::Powf(p) => unary(&|x| x.powf(*p)),
            OpSpec::Sum => (Vec::new(), vec![a.value.iter().copied().sum()]),
            OpSpec::Mean => {
                let n = T::of(a.value.len() as f64);
                (Vec::new(), vec![a.value.iter().copied().sum::<T>() / n])
            }
            OpSpec::Concat => {
                let tail = a.shape.get(1..).unwrap_or(&[]).to_vec();
                let mut rows = 0;
                let mut value = Vec::new();
                for v in inputs {
                    let n = &self.nodes[v.0];
                    if n.shape.is_empty() || n.shape[1..] != tail[..] {
                        return Err(mismatch(op, &a.shape, &n.shape));
                    }
                    rows += n.shape[0];
                    value.extend_from_slice(&n.value);
                }
                let mut shape = vec![rows];
                shape.extend(tail);
                (shape, value)
            }
            OpSpec::Slice { start, end } => {
                let rows = leading(&a.shape);
                if a.shape.is_empty() || start >= end || *end > rows {
                    return Err(invalid(op, format!("rows {start}..{end} out of range for shape {:?}", a.shape)));
                }
                let width = a.value.len() / rows;
                let mut shape = a.shape.clone();
                shape[0] = end - start;
                (shape, a.value[start * width..end * width].to_vec())
            }
            OpSpec::Transpose => {
                if a.shape.len() != 2 {
                    return Err(invalid(op, format!("needs a 2-D tensor, got {:?}", a.shape)));
                }
                let (r, c) = (a.shape[0], a.shape[1]);
                (vec![c, r], transpose_raw(&a.value, r, c))
            }
            OpSpec::AddBias => {
                let b = &self.nodes[inputs[1].0];
                if a.shape.len() != 2 || b.shape.len() != 1 || a.shape[1] != b.shape[0] {
                    return Err(mismatch(op, &a.shape, &b.shape));
                }
                let m = b.shape[0];
                let v = a
                    .value
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x + b.value[i % m])
                    .collect();
                (a.shape.clone(), v)
            }
            OpSpec::Reshape(shape) => {
                if numel(shape) != a.value.len() || shape.contains(&0) {
                    return Err(mismatch(op, &a.shape, shape));
                }
                (shape.clone(), a.value.clone())
            }
            OpSpec::UnflattenUpper(k) => {
                let k = *k;
                let e = edge_count(k);
                let ok = match a.shape.as_slice() {
                    [n] => *n == e,
                    [1, n] => *n == e,
                    _ => false,
                };
                if !ok || k < 2 {
                    return Err(mismatch(op, &a.shape, &[e]));
                }
                let mut out = vec![T::zero(); k * k];
                let mut idx = 0;
                for i in 0..k {
                    for j in (i + 1)..k {
                        out[i * k + j] = a.value[idx];
                        out[j * k + i] = a.value[idx];
                        idx += 1;
                    }
                }
                (vec![k, k], out)
            }
            OpSpec::LogSoftmax => {
                if a.shape.is_empty() {
                    return Err(invalid(op, "needs at least one axis"));
                }
                let width = *a.shape.last().unwrap();
                let mut out = Vec::with_capacity(a.value.len());
                for row in a.value.chunks(width) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
                    out.extend(row.iter().map(|&x| x - lse));
                }
                (a.shape.clone(), out)
            }
        })
    }

    /// Back-propagates from a scalar `loss`, returning the gradient of every
    /// `requires_grad` leaf the loss depends on. Clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(spec) = &node.spec else {
                out.by_leaf.insert(Var(idx), g);
                continue;
            };
            let contributions = self.local_grads(spec, node, &g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += *c),
                    slot => *slot = Some(contrib),
                }
            }
        }
        self.nodes.clear();
        Ok(out)
    }

    /// Vector-Jacobian products of `node` w.r.t. each of its inputs.
    fn local_grads(&self, spec: &OpSpec<T>, node: &Node<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let input = |i: usize| &self.nodes[node.inputs[i].0];
        let wants = |i: usize| input(i).requires_grad;
        let zip_map = |xs: &[T], f: &dyn Fn(T, T) -> T| -> Vec<T> { g.iter().zip(xs).map(|(&g, &x)| f(g, x)).collect() };
        match spec {
            OpSpec::MatMul => {
                let (a, b) = (input(0), input(1));
                let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
                let da = wants(0).then(|| matmul_raw(g, &transpose_raw(&b.value, k, m), n, m, k));
                let db = wants(1).then(|| matmul_raw(&transpose_raw(&a.value, n, k), g, k, n, m));
                vec![da, db]
            }
            OpSpec::Hadamard => {
                let da = wants(0).then(|| zip_map(&input(1).value, &|g, y| g * y));
                let db = wants(1).then(|| zip_map(&input(0).value, &|g, x| g * x));
                vec![da, db]
            }
            OpSpec::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            OpSpec::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
            OpSpec::Scale(c) => vec![Some(g.iter().map(|&v| v * *c).collect())],
            OpSpec::Relu => vec![Some(zip_map(&input(0).value, &|g, x| if x > T::zero() { g } else { T::zero() }))],
            OpSpec::Sigmoid => vec![Some(zip_map(&node.value, &|g, y| g * y * (T::one() - y)))],
            OpSpec::Exp => vec![Some(zip_map(&node.value, &|g, y| g * y))],
            OpSpec::Log => vec![Some(zip_map(&input(0).value, &|g, x| g / x))],
            OpSpec::Square => vec![Some(zip_map(&input(0).value, &|g, x| g * (x + x)))],
            OpSpec::Abs => vec![Some(zip_map(&input(0).value, &|g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }))],
            OpSpec::Powf(p) => {
                let p = *p;
                vec![Some(zip_map(&input(0).value, &|g, x| g * p * x.powf(p - T::one())))]
            }
            OpSpec::Sum => vec![Some(vec![g[0]; input(0).value.len()])],
            OpSpec::Mean => {
                let n = input(0).value.len();
                vec![Some(vec![g[0] / T::of(n as f64); n])]
            }
            OpSpec::Concat => {
                let mut offset = 0;
                node.inputs
                    .iter()
                    .map(|v| {
                        let len = self.nodes[v.0].value.len();
                        let part = g[offset..offset + len].to_vec();
                        offset += len;
                        Some(part)
                    })
                    .collect()
            }
            OpSpec::Slice { start, .. } => {
                let a = input(0);
                let width = a.value.len() / leading(&a.shape);
                let mut d = vec![T::zero(); a.value.len()];
                d[start * width..start * width + g.len()].copy_from_slice(g);
                vec![Some(d)]
            }
            OpSpec::Transpose => {
                let (r, c) = (input(0).shape[0], input(0).shape[1]);
                vec![Some(transpose_raw(g, c, r))]
            }
            OpSpec::AddBias => {
                let m = input(1).shape[0];
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    db
                });
                vec![Some(g.to_vec()), db]
            }
            OpSpec::Reshape(_) => vec![Some(g.to_vec())],
            OpSpec::UnflattenUpper(k) => {
                let k = *k;
                let mut d = Vec::with_capacity(edge_count(k));
                for i in 0..k {
                    for j in (i + 1)..k {
                        d.push(g[i * k + j] + g[j * k + i]);
                    }
                }
                vec![Some(d)]
            }
            OpSpec::LogSoftmax => {
                let width = *node.shape.last().unwrap();
                let mut d = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(width).zip(node.value.chunks(width)) {
                    let total: T = grow.iter().copied().sum();
                    d.extend(grow.iter().zip(yrow).map(|(&gv, &y)| gv - y.exp() * total));
                }
                vec![Some(d)]
            }
        }
    }
}

/// Typed shorthands for [`Tape::record`].
impl<T: Scalar> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::MatMul, &[a, b])
    }
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Hadamard, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Sub, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Scale(c), &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Log, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Square, &[a])
    }
    pub fn abs(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Abs, &[a])
    }
    pub fn powf(&mut self, a: Var, p: T) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Powf(p), &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Mean, &[a])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Concat, parts)
    }
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Slice { start, end }, &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Transpose, &[a])
    }
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::AddBias, &[a, bias])
    }
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var, AutodiffError> {
        self.record(OpSpec::Reshape(shape.into()), &[a])
    }
    pub fn unflatten_upper(&mut self, a: Var, k: usize) -> Result<Var, AutodiffError> {
        self.record(OpSpec::UnflattenUpper(k), &[a])
    }
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(OpSpec::LogSoftmax, &[a])
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Multiplies every row of `x: [n, m]` elementwise by `row: [m]` or `[1, m]`.
    pub fn mul_rows(&mut self, x: Var, row: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(x).to_vec();
        let rs = self.shape(row).to_vec();
        let width = *rs.last().unwrap_or(&0);
        if xs.len() != 2 || numel(&rs) != width || xs[1] != width {
            return Err(mismatch("mul_rows", &xs, &rs));
        }
        let row = if rs.len() == 2 { row } else { self.reshape(row, vec![1, width])? };
        let ones = self.constant(vec![xs[0], 1], vec![T::one(); xs[0]])?;
        let tiled = self.matmul(ones, row)?;
        self.hadamard(x, tiled)
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
