//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and enough
//! saved state to run its backward rule. [`Tape::backward`] walks the nodes
//! in strict reverse recording order, which is a valid topological order
//! because inputs are always recorded before the nodes that consume them.

use std::fmt;

use super::linalg::{symmetric_part, Cholesky};
use super::tensor::{gemm_nt_acc, gemm_tn_acc};
use super::{GradError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax reduction axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each column (reduce over rows).
    Rows,
    /// Normalize each row (reduce over columns).
    Cols,
}

/// Operation kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Add,
    AddRow,
    AddScalar,
    Scale,
    ScaleBy,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    ConcatRows,
    ConcatCols,
    Transpose,
    SliceRows,
    SliceCols,
    Softmax,
    Dropout,
    Mean,
    Sum,
    CrossEntropy,
    SolveSpd,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 22] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::AddRow,
        OpKind::AddScalar,
        OpKind::Scale,
        OpKind::ScaleBy,
        OpKind::Mul,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Log,
        OpKind::ConcatRows,
        OpKind::ConcatCols,
        OpKind::Transpose,
        OpKind::SliceRows,
        OpKind::SliceCols,
        OpKind::Softmax,
        OpKind::Dropout,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::CrossEntropy,
        OpKind::SolveSpd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::AddScalar => "add_scalar",
            OpKind::Scale => "scale",
            OpKind::ScaleBy => "scale_by",
            OpKind::Mul => "mul",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::ConcatRows => "concat_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Transpose => "transpose",
            OpKind::SliceRows => "slice_rows",
            OpKind::SliceCols => "slice_cols",
            OpKind::Softmax => "softmax",
            OpKind::Dropout => "dropout",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::SolveSpd => "solve_spd",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::DIFFERENTIABLE
            .iter()
            .copied()
            .find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    AddScalar(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Transpose(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Softmax(usize, Axis),
    Dropout(usize, Vec<f64>),
    Mean(usize),
    Sum(usize),
    /// logits, targets, row-softmax probabilities
    CrossEntropy(usize, Tensor, Tensor),
    /// A, B, factor of sym(A)
    SolveSpd(usize, usize, Cholesky),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Scale(..) => OpKind::Scale,
            Op::ScaleBy(..) => OpKind::ScaleBy,
            Op::Mul(..) => OpKind::Mul,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::Transpose(_) => OpKind::Transpose,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Dropout(..) => OpKind::Dropout,
            Op::Mean(_) => OpKind::Mean,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy(..) => OpKind::CrossEntropy,
            Op::SolveSpd(..) => OpKind::SolveSpd,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records a computation for one backward pass. Single-owner; build a new
/// tape per episode.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of a scalar loss with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; `None` when `var` is not tracked.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> GradError {
    GradError::ShapeMismatch {
        op,
        left: left.shape(),
        right: right.shape(),
    }
}

fn slot(grads: &mut [Option<Tensor>], idx: usize, shape: (usize, usize)) -> &mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape whose backward rule for `kind` is deliberately wrong (the
    /// incoming gradient is doubled). Used by verification negative controls.
    pub fn with_fault(kind: OpKind) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(kind),
        }
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let value = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a.0, b.0), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let mut value = x.clone();
        value.add_assign(y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a.0, b.0), tracked))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(shape_err("add_row", x, y));
        }
        let mut value = x.clone();
        let n = x.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += y.data()[i % n];
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::AddRow(a.0, b.0), tracked))
    }

    /// Adds the `1 × 1` value `s` to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(s));
        if y.shape() != (1, 1) {
            return Err(shape_err("add_scalar", x, y));
        }
        let c = y.item();
        let value = x.map(|v| v + c);
        let tracked = self.tracked(a) || self.tracked(s);
        Ok(self.push(value, Op::AddScalar(a.0, s.0), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scaled(c);
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a.0, c), tracked)
    }

    /// Multiplies `a` by the `1 × 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(s));
        if y.shape() != (1, 1) {
            return Err(shape_err("scale_by", x, y));
        }
        let value = x.scaled(y.item());
        let tracked = self.tracked(a) || self.tracked(s);
        Ok(self.push(value, Op::ScaleBy(a.0, s.0), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a.0, b.0), tracked))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let tracked = self.tracked(a);
        self.push(value, Op::Tanh(a.0), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let tracked = self.tracked(a);
        self.push(value, Op::Sigmoid(a.0), tracked)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let tracked = self.tracked(a);
        self.push(value, Op::Exp(a.0), tracked)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let tracked = self.tracked(a);
        self.push(value, Op::Log(a.0), tracked)
    }

    /// Stacks inputs vertically. All inputs must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let first = parts.first().ok_or(GradError::EmptyConcat)?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let tracked = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), tracked))
    }

    /// Joins inputs horizontally. All inputs must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let first = parts.first().ok_or(GradError::EmptyConcat)?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            for r in 0..rows {
                let dst = r * cols + offset;
                value.data_mut()[dst..dst + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        let tracked = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let tracked = self.tracked(a);
        self.push(value, Op::Transpose(a.0), tracked)
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let x = self.value(a);
        if start >= end || end > x.rows() {
            return Err(GradError::BadSlice {
                op: "slice_rows",
                range: (start, end),
                shape: x.shape(),
            });
        }
        let cols = x.cols();
        let value = Tensor::from_vec(end - start, cols, x.data()[start * cols..end * cols].to_vec())?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SliceRows(a.0, start), tracked))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let x = self.value(a);
        if start >= end || end > x.cols() {
            return Err(GradError::BadSlice {
                op: "slice_cols",
                range: (start, end),
                shape: x.shape(),
            });
        }
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        let value = Tensor::from_vec(x.rows(), end - start, data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SliceCols(a.0, start), tracked))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let value = softmax(self.value(a), axis);
        let tracked = self.tracked(a);
        self.push(value, Op::Softmax(a.0, axis), tracked)
    }

    /// Applies a fixed keep-mask with inverted scaling `1 / (1 - rate)`.
    /// `rate = 0` is the identity.
    pub fn dropout(&mut self, a: Var, keep: &[bool], rate: f64) -> Result<Var, GradError> {
        let x = self.value(a);
        if keep.len() != x.len() {
            return Err(GradError::BadLength {
                shape: x.shape(),
                len: keep.len(),
            });
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(GradError::InvalidArgument("dropout rate must be in [0, 1)"));
        }
        let scale = 1.0 / (1.0 - rate);
        let mult: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let data = x.data().iter().zip(&mult).map(|(v, m)| v * m).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Dropout(a.0, mult), tracked))
    }

    /// Mean of all entries, as `1 × 1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        let tracked = self.tracked(a);
        self.push(value, Op::Mean(a.0), tracked)
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::Sum(a.0), tracked)
    }

    /// Mean over rows of `-Σ_c target[r,c] · log softmax(logits[r])_c`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var, GradError> {
        let x = self.value(logits);
        if x.shape() != targets.shape() || x.rows() == 0 {
            return Err(shape_err("cross_entropy", x, targets));
        }
        let probs = softmax(x, Axis::Cols);
        let mut total = 0.0;
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (c, &t) in targets.row(r).iter().enumerate() {
                if t != 0.0 {
                    total -= t * (row[c] - lse);
                }
            }
        }
        let value = Tensor::scalar(total / x.rows() as f64);
        let tracked = self.tracked(logits);
        Ok(self.push(value, Op::CrossEntropy(logits.0, targets.clone(), probs), tracked))
    }

    /// Solves `A X = B` for symmetric positive-definite `A`.
    ///
    /// `A` enters only through its symmetric part `(A + Aᵀ)/2`, so the
    /// gradient returned for `A` is symmetric.
    pub fn solve_spd(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != x.cols() || x.rows() != y.rows() {
            return Err(shape_err("solve_spd", x, y));
        }
        let chol = Cholesky::factor(&symmetric_part(x))?;
        let value = chol.solve(y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::SolveSpd(a.0, b.0, chol), tracked))
    }

    /// Reverse pass from a `1 × 1` loss. Every tracked node reachable from
    /// `loss` receives a gradient; tracked leaves that do not influence the
    /// loss receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return Err(GradError::NotScalar {
                shape: root.value.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let g = if self.fault == Some(node.op.kind()) {
                g.scaled(2.0)
            } else {
                g
            };
            self.apply_rule(node, &g, &mut grads)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                let (r, c) = node.value.shape();
                grads[i] = Some(Tensor::zeros(r, c));
            }
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn apply_rule(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), GradError> {
        let nodes = &self.nodes;
        let tracked = |idx: usize| nodes[idx].tracked;
        let shape = |idx: usize| nodes[idx].value.shape();
        let y = &node.value;

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if tracked(*a) {
                    gemm_nt_acc(g, &nodes[*b].value, slot(grads, *a, shape(*a)), 1.0);
                }
                if tracked(*b) {
                    gemm_tn_acc(&nodes[*a].value, g, slot(grads, *b, shape(*b)), 1.0);
                }
            }
            Op::Add(a, b) => {
                for &idx in [a, b] {
                    if tracked(idx) {
                        slot(grads, idx, shape(idx)).add_assign(g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if tracked(*a) {
                    slot(grads, *a, shape(*a)).add_assign(g);
                }
                if tracked(*b) {
                    let n = g.cols();
                    let gb = slot(grads, *b, shape(*b));
                    for (i, v) in g.data().iter().enumerate() {
                        gb.data_mut()[i % n] += v;
                    }
                }
            }
            Op::AddScalar(a, s) => {
                if tracked(*a) {
                    slot(grads, *a, shape(*a)).add_assign(g);
                }
                if tracked(*s) {
                    slot(grads, *s, (1, 1)).data_mut()[0] += g.sum();
                }
            }
            Op::Scale(a, c) => {
                if tracked(*a) {
                    slot(grads, *a, shape(*a)).add_scaled(g, *c);
                }
            }
            Op::ScaleBy(a, s) => {
                let c = nodes[*s].value.item();
                if tracked(*a) {
                    slot(grads, *a, shape(*a)).add_scaled(g, c);
                }
                if tracked(*s) {
                    let x = &nodes[*a].value;
                    let dot: f64 = g.data().iter().zip(x.data()).map(|(p, q)| p * q).sum();
                    slot(grads, *s, (1, 1)).data_mut()[0] += dot;
                }
            }
            Op::Mul(a, b) => {
                if tracked(*a) {
                    let other = &nodes[*b].value;
                    let ga = slot(grads, *a, shape(*a));
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
                        *o += gv * bv;
                    }
                }
                if tracked(*b) {
                    let other = &nodes[*a].value;
                    let gb = slot(grads, *b, shape(*b));
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::Tanh(a) => unary_rule(grads, *a, g, y, |yv| 1.0 - yv * yv),
            Op::Sigmoid(a) => unary_rule(grads, *a, g, y, |yv| yv * (1.0 - yv)),
            Op::Exp(a) => unary_rule(grads, *a, g, y, |yv| yv),
            Op::Log(a) => {
                let x = &nodes[*a].value;
                let ga = slot(grads, *a, x.shape());
                for ((o, gv), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                    *o += gv / xv;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = shape(p);
                    if tracked(p) {
                        let gp = slot(grads, p, (r, c));
                        for (o, v) in gp
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[offset * cols..(offset + r) * cols])
                        {
                            *o += v;
                        }
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = shape(p);
                    if tracked(p) {
                        let gp = slot(grads, p, (r, c));
                        for row in 0..r {
                            let src = &g.data()[row * cols + offset..row * cols + offset + c];
                            for (o, v) in gp.data_mut()[row * c..(row + 1) * c].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Transpose(a) => {
                if tracked(*a) {
                    slot(grads, *a, shape(*a)).add_assign(&g.transpose());
                }
            }
            Op::SliceRows(a, start) => {
                if tracked(*a) {
                    let cols = g.cols();
                    let ga = slot(grads, *a, shape(*a));
                    let dst = &mut ga.data_mut()[start * cols..(start + g.rows()) * cols];
                    for (o, v) in dst.iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if tracked(*a) {
                    let (rows, width) = g.shape();
                    let total = shape(*a).1;
                    let ga = slot(grads, *a, shape(*a));
                    for r in 0..rows {
                        for c in 0..width {
                            ga.data_mut()[r * total + start + c] += g.get(r, c);
                        }
                    }
                }
            }
            Op::Softmax(a, axis) => {
                if tracked(*a) {
                    let (rows, cols) = y.shape();
                    let ga = slot(grads, *a, (rows, cols));
                    match axis {
                        Axis::Cols => {
                            for r in 0..rows {
                                let dot: f64 = (0..cols).map(|c| g.get(r, c) * y.get(r, c)).sum();
                                for c in 0..cols {
                                    ga.data_mut()[r * cols + c] += y.get(r, c) * (g.get(r, c) - dot);
                                }
                            }
                        }
                        Axis::Rows => {
                            for c in 0..cols {
                                let dot: f64 = (0..rows).map(|r| g.get(r, c) * y.get(r, c)).sum();
                                for r in 0..rows {
                                    ga.data_mut()[r * cols + c] += y.get(r, c) * (g.get(r, c) - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::Dropout(a, mult) => {
                if tracked(*a) {
                    let ga = slot(grads, *a, shape(*a));
                    for ((o, gv), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mult) {
                        *o += gv * m;
                    }
                }
            }
            Op::Mean(a) => {
                if tracked(*a) {
                    let (r, c) = shape(*a);
                    let v = g.item() / (r * c) as f64;
                    for o in slot(grads, *a, (r, c)).data_mut() {
                        *o += v;
                    }
                }
            }
            Op::Sum(a) => {
                if tracked(*a) {
                    let v = g.item();
                    for o in slot(grads, *a, shape(*a)).data_mut() {
                        *o += v;
                    }
                }
            }
            Op::CrossEntropy(a, targets, probs) => {
                if tracked(*a) {
                    let (rows, cols) = probs.shape();
                    let scale = g.item() / rows as f64;
                    let ga = slot(grads, *a, (rows, cols));
                    for r in 0..rows {
                        let mass: f64 = targets.row(r).iter().sum();
                        for c in 0..cols {
                            ga.data_mut()[r * cols + c] +=
                                scale * (probs.get(r, c) * mass - targets.get(r, c));
                        }
                    }
                }
            }
            Op::SolveSpd(a, b, chol) => {
                // X = A⁻¹B:  dB = A⁻¹ G,  dA = -sym(dB Xᵀ)
                let db = chol.solve(g)?;
                if tracked(*a) {
                    let n = db.rows();
                    let mut outer = Tensor::zeros(n, n);
                    gemm_nt_acc(&db, y, &mut outer, 1.0);
                    let ga = slot(grads, *a, (n, n));
                    for i in 0..n {
                        for j in 0..n {
                            ga.data_mut()[i * n + j] -= 0.5 * (outer.get(i, j) + outer.get(j, i));
                        }
                    }
                }
                if tracked(*b) {
                    slot(grads, *b, shape(*b)).add_assign(&db);
                }
            }
        }
        Ok(())
    }
}

fn unary_rule(
    grads: &mut [Option<Tensor>],
    a: usize,
    g: &Tensor,
    y: &Tensor,
    local: impl Fn(f64) -> f64,
) {
    let ga = slot(grads, a, y.shape());
    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
        *o += gv * local(*yv);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a plain tensor along `axis`.
pub fn softmax(x: &Tensor, axis: Axis) -> Tensor {
    let (rows, cols) = x.shape();
    let mut out = x.clone();
    let (lanes, len, lane_stride, step) = match axis {
        Axis::Cols => (rows, cols, cols, 1),
        Axis::Rows => (cols, rows, 1, cols),
    };
    let data = out.data_mut();
    for lane in 0..lanes {
        let idx = |k: usize| lane * lane_stride + k * step;
        let max = (0..len).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..len {
            let e = (data[idx(k)] - max).exp();
            data[idx(k)] = e;
            total += e;
        }
        for k in 0..len {
            data[idx(k)] /= total;
        }
    }
    out
}
