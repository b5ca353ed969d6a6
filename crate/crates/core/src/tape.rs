//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node to the [`Tape`]; node ids are indices into
//! the tape, so the recorded graph is acyclic by construction and reverse
//! index order is a valid topological order for the backward sweep.

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(index: usize) -> Self {
        NodeId(index)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulNT(NodeId, NodeId),
    /// `a * b` with order-independent summation over the shared dimension.
    Mix(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + 1 * bias` where bias is a single row.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Scales row `i` of `x` by the `i`-th entry of a column vector.
    ScaleRows {
        column: NodeId,
        x: NodeId,
    },
    OneMinus(NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    ReverseRows(NodeId),
    Sum(NodeId),
    MeanSquaredError(NodeId, Matrix),
}

#[derive(Clone, Debug)]
struct TapeNode {
    op: Op,
    value: Matrix,
}

/// Records a forward computation. A tape is built per forward pass and
/// dropped afterwards.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

/// Gradients of a scalar root with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `id`; nodes the root does not depend on get zeros.
    pub fn wrt(&self, id: NodeId) -> Matrix {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, id: NodeId) -> Matrix {
        let (r, c) = self.shapes[id.0];
        self.grads[id.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(TapeNode { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    /// Adds an input (parameter or data) node.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let value = tensor::matmul_nt(va, vb);
        Ok(self.push(Op::MatMulNT(a, b), value))
    }

    /// `weights * x`, where every output entry is an [`tensor::ordered_sum`]
    /// of its products. Permuting the columns of `weights` together with the
    /// rows of `x` leaves the result bit-identical.
    pub fn mix(&mut self, weights: NodeId, x: NodeId) -> Result<NodeId> {
        let (w, xv) = (self.value(weights), self.value(x));
        if w.cols() != xv.rows() {
            return Err(Error::Shape {
                op: "mix",
                left: w.shape(),
                right: xv.shape(),
            });
        }
        let mut out = Matrix::zeros(w.rows(), xv.cols());
        for t in 0..w.rows() {
            let wr = w.row(t);
            for j in 0..xv.cols() {
                let v = tensor::ordered_sum(wr.iter().enumerate().map(|(i, &a)| a * xv.get(i, j)));
                out.set(t, j, v);
            }
        }
        Ok(self.push(Op::Mix(weights, x), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut value = va.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddRow(a, bias), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale_rows(&mut self, column: NodeId, x: NodeId) -> Result<NodeId> {
        let (c, xv) = (self.value(column), self.value(x));
        if c.cols() != 1 || c.rows() != xv.rows() {
            return Err(Error::Shape {
                op: "scale_rows",
                left: c.shape(),
                right: xv.shape(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let s = c.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(Op::ScaleRows { column, x }, value))
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 1.0 - x);
        self.push(Op::OneMinus(a), value)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.value(a).map(|x| x * k);
        self.push(Op::Scale(a, k), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = tensor::sigmoid(self.value(a));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = tensor::tanh(self.value(a));
        self.push(Op::Tanh(a), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = tensor::softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start + len > v.rows() {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: v.rows(),
            });
        }
        let value = v.slice_rows(start, len);
        Ok(self.push(Op::SliceRows(a, start), value))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start + len > v.cols() {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: v.cols(),
            });
        }
        let value = v.slice_cols(start, len);
        Ok(self.push(Op::SliceCols(a, start), value))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&values)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn reverse_rows(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).reverse_rows();
        self.push(Op::ReverseRows(a), value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// `(1/N) * ||a - target||^2` over all `N` entries.
    pub fn mean_squared_error(&mut self, a: NodeId, target: &Matrix) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape() != target.shape() {
            return Err(Error::Shape {
                op: "mean_squared_error",
                left: v.shape(),
                right: target.shape(),
            });
        }
        let n = v.len().max(1) as f64;
        let total: f64 = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, g)| (p - g) * (p - g))
            .sum();
        let value = Matrix::scalar(total / n);
        Ok(self.push(Op::MeanSquaredError(a, target.clone()), value))
    }

    /// Propagates `d root / d node` to every node reachable from `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Mix(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, tensor::matmul_nt(g, vb));
                accumulate(grads, *b, tensor::matmul_tn(va, g));
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = tensor::matmul(g, vb).expect("shapes checked in forward");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, tensor::matmul_tn(g, va));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for row in g.row_iter() {
                    for (s, v) in gb.data_mut().iter_mut().zip(row) {
                        *s += v;
                    }
                }
                accumulate(grads, *bias, gb);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
            }
            Op::ScaleRows { column, x } => {
                let (c, xv) = (self.value(*column), self.value(*x));
                let mut gc = Matrix::zeros(c.rows(), 1);
                let mut gx = g.clone();
                for r in 0..g.rows() {
                    gc.set(r, 0, tensor::dot(g.row(r), xv.row(r)));
                    let s = c.get(r, 0);
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                }
                accumulate(grads, *column, gc);
                accumulate(grads, *x, gx);
            }
            Op::OneMinus(a) => accumulate(grads, *a, g.map(|v| -v)),
            Op::Scale(a, k) => accumulate(grads, *a, g.map(|v| v * k)),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (yr, gr) = (out.row(r), g.row(r));
                    let inner = tensor::dot(gr, yr);
                    for (o, (&y, &gv)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = y * (gv - inner);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let target = grad_slot(grads, *a, self.shape(*a));
                let cols = g.cols();
                for (r, row) in g.row_iter().enumerate() {
                    let dst = &mut target.data_mut()[(start + r) * cols..(start + r + 1) * cols];
                    dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            }
            Op::SliceCols(a, start) => {
                let target = grad_slot(grads, *a, self.shape(*a));
                for (r, row) in g.row_iter().enumerate() {
                    let dst = &mut target.row_mut(r)[*start..*start + row.len()];
                    dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.shape(*p).0;
                    accumulate(grads, *p, g.slice_rows(offset, rows));
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.shape(*p).1;
                    accumulate(grads, *p, g.slice_cols(offset, cols));
                    offset += cols;
                }
            }
            Op::ReverseRows(a) => accumulate(grads, *a, g.reverse_rows()),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::MeanSquaredError(a, target) => {
                let va = self.value(*a);
                let k = 2.0 * g.get(0, 0) / va.len().max(1) as f64;
                accumulate(grads, *a, va.zip_map(target, |p, t| k * (p - t)));
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Matrix>], id: NodeId, shape: (usize, usize)) -> &mut Matrix {
    grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, contribution: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}
