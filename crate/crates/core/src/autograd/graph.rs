//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a [`Value`] to the [`Graph`], so the node list is
//! topologically ordered by construction: a node's parents always have smaller
//! indices. [`Graph::backward`] walks the list in reverse and accumulates
//! exact gradients into each parent, summing over fan-out.

use super::matrix::Matrix;
use super::AutogradError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Producing operation of a node, with parent handles.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `m x n` plus an `m x 1` column broadcast over every column.
    AddColumn(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    /// Column-wise softmax.
    Softmax(Var),
    Sum(Var),
    Pick(Var, usize, usize),
    /// Weighted sum over columns of `-log softmax(column)[target]`.
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
    },
    /// Stack along rows.
    Concat(Vec<Var>),
    /// Stack along columns.
    ConcatColumns(Vec<Var>),
    SliceRows(Var, usize),
    SliceColumns(Var, usize),
    Transpose(Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddColumn(..) => "add_column",
            Op::Mul(..) => "elementwise_mul",
            Op::Scale(..) => "scalar_mul",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Pick(..) => "pick",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Concat(..) => "concat",
            Op::ConcatColumns(..) => "concat_columns",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceColumns(..) => "slice_columns",
            Op::Transpose(..) => "transpose",
        }
    }
}

/// One node: forward payload, lazily allocated gradient, producing op.
#[derive(Clone, Debug)]
pub struct Value {
    pub data: Matrix,
    pub grad: Option<Matrix>,
    pub op: Op,
    requires_grad: bool,
}

impl Value {
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Default, Debug, Clone)]
pub struct Graph {
    nodes: Vec<Value>,
}

type Result<T> = std::result::Result<T, AutogradError>;

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> AutogradError {
    AutogradError::Shape { op, left, right }
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

    pub fn node(&self, v: Var) -> &Value {
        &self.nodes[v.0]
    }

    pub fn nodes(&self) -> &[Value] {
        &self.nodes
    }

    /// A differentiable leaf (parameter or input of interest).
    pub fn leaf(&mut self, data: Matrix) -> Var {
        self.push(data, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, data: Matrix) -> Var {
        self.push(data, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].data.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, data: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Value {
            data,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn add_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(col));
        if sb != (sa.0, 1) {
            return Err(shape_err("add_column", sa, sb));
        }
        let b = self.value(col).as_slice().to_vec();
        let mut out = self.value(a).clone();
        let cols = sa.1;
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v += b[i / cols];
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::AddColumn(a, col), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("elementwise_mul", sa, sb));
        }
        let rhs = self.value(b);
        let mut out = self.value(a).clone();
        for (o, &r) in out.as_mut_slice().iter_mut().zip(rhs.as_slice()) {
            *o *= r;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Softmax over each column independently (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape_err("softmax", x.shape(), (0, 0)));
        }
        let out = softmax_columns(x);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        let s = self.shape(a);
        if row >= s.0 || col >= s.1 {
            return Err(AutogradError::Index {
                op: "pick",
                index: (row, col),
                shape: s,
            });
        }
        let out = Matrix::scalar(self.value(a).get(row, col));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pick(a, row, col), rg))
    }

    /// `sum_j weights[j] * CE(softmax(logits[:, j]), targets[j])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let s = self.shape(logits);
        if targets.len() != s.1 || weights.len() != s.1 {
            return Err(shape_err("cross_entropy", s, (targets.len(), weights.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s.0) {
            return Err(AutogradError::Index {
                op: "cross_entropy",
                index: (bad, 0),
                shape: s,
            });
        }
        let probs = softmax_columns(self.value(logits));
        let x = self.value(logits);
        let mut total = 0.0;
        for (j, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            let max = (0..s.0).map(|r| x.get(r, j)).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..s.0).map(|r| (x.get(r, j) - max).exp()).sum::<f64>().ln();
            total += w * (lse - x.get(t, j));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Matrix::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutogradError::Empty("concat"))?;
        let cols = self.shape(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(shape_err("concat", (rows, cols), s));
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Matrix::from_vec(rows, cols, data), Op::Concat(parts.to_vec()), rg))
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutogradError::Empty("concat_columns"))?;
        let rows = self.shape(*first).0;
        let mut total_cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat_columns", (rows, total_cols), s));
            }
            total_cols += s.1;
        }
        let mut out = Matrix::zeros(rows, total_cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                for c in 0..v.cols() {
                    out.set(r, offset + c, v.get(r, c));
                }
            }
            offset += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatColumns(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.0 || len == 0 {
            return Err(shape_err("slice_rows", s, (start, len)));
        }
        let out = self.value(a).rows_range(start, len);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.1 || len == 0 {
            return Err(shape_err("slice_columns", s, (start, len)));
        }
        let out = self.value(a).cols_range(start, len);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceColumns(a, start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Reverse accumulation from a scalar root. Gradients from any previous
    /// call are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s != (1, 1) {
            return Err(AutogradError::NonScalarRoot(s));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let Some(upstream) = node.grad.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            propagate(before, node, upstream);
        }
        Ok(())
    }
}

fn accumulate(nodes: &mut [Value], v: Var, contribution: Matrix) {
    let node = &mut nodes[v.0];
    match &mut node.grad {
        Some(g) => g.add_assign(&contribution),
        None => node.grad = Some(contribution),
    }
}

fn accumulate_with(nodes: &mut [Value], v: Var, f: impl FnOnce(&Matrix) -> Matrix) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let contribution = f(&nodes[v.0].data);
    accumulate(nodes, v, contribution);
}

fn propagate(before: &mut [Value], node: &Value, up: &Matrix) {
    let out = &node.data;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            if before[a.0].requires_grad {
                let g = up.matmul_t(&before[b.0].data);
                accumulate(before, a, g);
            }
            if before[b.0].requires_grad {
                let g = before[a.0].data.t_matmul(up);
                accumulate(before, b, g);
            }
        }
        Op::Add(a, b) => {
            accumulate_with(before, *a, |_| up.clone());
            accumulate_with(before, *b, |_| up.clone());
        }
        Op::AddColumn(a, col) => {
            accumulate_with(before, *a, |_| up.clone());
            accumulate_with(before, *col, |_| {
                let cols = up.cols();
                Matrix::from_fn(up.rows(), 1, |r, _| (0..cols).map(|c| up.get(r, c)).sum())
            });
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if before[a.0].requires_grad {
                let g = hadamard(up, &before[b.0].data);
                accumulate(before, a, g);
            }
            if before[b.0].requires_grad {
                let g = hadamard(up, &before[a.0].data);
                accumulate(before, b, g);
            }
        }
        Op::Scale(a, f) => {
            let f = *f;
            accumulate_with(before, *a, |_| up.map(|v| v * f));
        }
        Op::Tanh(a) => accumulate_with(before, *a, |_| {
            let mut g = up.clone();
            for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *gv *= 1.0 - y * y;
            }
            g
        }),
        Op::Sigmoid(a) => accumulate_with(before, *a, |_| {
            let mut g = up.clone();
            for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *gv *= y * (1.0 - y);
            }
            g
        }),
        Op::Softmax(a) => accumulate_with(before, *a, |_| {
            // Jacobian-vector product per column: y * (g - <g, y>).
            let (rows, cols) = out.shape();
            let mut g = Matrix::zeros(rows, cols);
            for c in 0..cols {
                let dotp: f64 = (0..rows).map(|r| up.get(r, c) * out.get(r, c)).sum();
                for r in 0..rows {
                    g.set(r, c, out.get(r, c) * (up.get(r, c) - dotp));
                }
            }
            g
        }),
        Op::Sum(a) => {
            let u = up.item();
            accumulate_with(before, *a, |x| Matrix::filled(x.rows(), x.cols(), u));
        }
        Op::Pick(a, r, c) => {
            let (r, c, u) = (*r, *c, up.item());
            accumulate_with(before, *a, |x| {
                let mut g = Matrix::zeros(x.rows(), x.cols());
                g.set(r, c, u);
                g
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            weights,
            probs,
        } => {
            let u = up.item();
            accumulate_with(before, *logits, |_| {
                let mut g = probs.clone();
                for (j, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    for r in 0..g.rows() {
                        let p = g.get(r, j) - if r == t { 1.0 } else { 0.0 };
                        g.set(r, j, u * w * p);
                    }
                }
                g
            });
        }
        Op::Concat(parts) => {
            let cols = up.cols();
            let mut offset = 0;
            for &p in parts {
                let rows = before[p.0].data.rows();
                if before[p.0].requires_grad {
                    let g = Matrix::from_vec(
                        rows,
                        cols,
                        up.as_slice()[offset * cols..(offset + rows) * cols].to_vec(),
                    );
                    accumulate(before, p, g);
                }
                offset += rows;
            }
        }
        Op::ConcatColumns(parts) => {
            let mut offset = 0;
            for &p in parts {
                let cols = before[p.0].data.cols();
                if before[p.0].requires_grad {
                    let g = up.cols_range(offset, cols);
                    accumulate(before, p, g);
                }
                offset += cols;
            }
        }
        Op::SliceRows(a, start) => {
            let start = *start;
            accumulate_with(before, *a, |x| {
                let mut g = Matrix::zeros(x.rows(), x.cols());
                let cols = x.cols();
                g.as_mut_slice()[start * cols..start * cols + up.len()].copy_from_slice(up.as_slice());
                g
            });
        }
        Op::SliceColumns(a, start) => {
            let start = *start;
            accumulate_with(before, *a, |x| {
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for r in 0..up.rows() {
                    for c in 0..up.cols() {
                        g.set(r, start + c, up.get(r, c));
                    }
                }
                g
            });
        }
        Op::Transpose(a) => accumulate_with(before, *a, |_| up.transpose()),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o *= v;
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Column-wise, max-subtracted softmax.
pub fn softmax_columns(x: &Matrix) -> Matrix {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    for c in 0..cols {
        let max = (0..rows).map(|r| x.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in 0..rows {
            let e = (x.get(r, c) - max).exp();
            out.set(r, c, e);
            total += e;
        }
        for r in 0..rows {
            out.set(r, c, out.get(r, c) / total);
        }
    }
    out
}

/// Softmax of a plain slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    softmax_columns(&Matrix::column(x)).into_vec()
}
