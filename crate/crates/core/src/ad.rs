//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied to matrix-valued nodes in
//! execution order, so parents always precede children. [`Tape::backward`]
//! walks the record in reverse and returns a fresh set of adjoints; the tape
//! itself is never mutated by a backward pass, so forward values stay
//! immutable and repeated backward calls are independent of one another.
//!
//! Nodes that do not depend on any parameter leaf are marked as not needing a
//! gradient and are skipped during the reverse sweep.
//!
//! ```
//! use difftensor::ad::Tape;
//! use difftensor::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.parameter(Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
//! let sq = tape.square(x);
//! let loss = tape.sum_all(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).as_slice(), &[2.0, 4.0]);
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Shape};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn rows(self) -> usize {
        self.rows
    }

    pub fn cols(self) -> usize {
        self.cols
    }

    pub fn shape(self) -> Shape {
        Shape(self.rows, self.cols)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({}x{})", self.id, self.rows, self.cols)
    }
}

/// A primitive defined outside this module.
///
/// `backward` receives the parent values, the forward output and the
/// upstream adjoint, and returns one adjoint per parent (or `None` where
/// `needs[i]` is false).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, parents: &[&Matrix], output: &Matrix, grad: &Matrix, needs: &[bool]) -> Vec<Option<Matrix>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    SumAll(usize),
    SumRows(usize),
    SelectRows(usize, Vec<usize>),
    ScatterAddRows(usize, Vec<usize>),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    AddRowBroadcast(usize, usize),
    Affine { x: usize, w: usize, b: usize },
    LinComb(Vec<(usize, f64)>),
    Custom(Box<dyn CustomOp>, Vec<usize>),
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, zero-filled when the root does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let Shape(r, c) = self.shapes[var.id];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { nodes: Vec::with_capacity(n) }
    }

    /// Drops every node, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.id].value
    }

    /// Whether gradients flow into `var` from some parameter leaf.
    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.id].needs_grad
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        let (rows, cols) = (value.rows(), value.cols());
        self.nodes.push(Node { op, value, needs_grad });
        Var { id, rows, cols }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A leaf whose adjoint is reported by [`Tape::backward`].
    pub fn parameter(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Add(a.id, b.id), v, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Sub(a.id, b.id), v, ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Mul(a.id, b.id), v, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::MatMul(a.id, b.id), v, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.needs(&[a.id]);
        self.push(Op::Transpose(a.id), v, ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        let ng = self.needs(&[a.id]);
        self.push(Op::Scale(a.id, factor), v, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.needs(&[a.id]);
        self.push(Op::Tanh(a.id), v, ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.needs(&[a.id]);
        self.push(Op::Exp(a.id), v, ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.needs(&[a.id]);
        self.push(Op::Log(a.id), v, ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.needs(&[a.id]);
        self.push(Op::Square(a.id), v, ng)
    }

    /// Sum of every entry, as a 1x1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let ng = self.needs(&[a.id]);
        self.push(Op::SumAll(a.id), v, ng)
    }

    /// Per-row sums, `n x c -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::from_fn(x.rows(), 1, |r, _| x.row(r).iter().sum());
        let ng = self.needs(&[a.id]);
        self.push(Op::SumRows(a.id), v, ng)
    }

    /// Gathers rows `indices` of `a` (repeats allowed).
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::IndexOutOfRange(format!("select_rows: row {bad} of a {} matrix", x.shape())));
        }
        let cols = x.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let v = Matrix::from_vec(indices.len(), cols, data)?;
        let ng = self.needs(&[a.id]);
        Ok(self.push(Op::SelectRows(a.id, indices.to_vec()), v, ng))
    }

    /// Adds row `r` of `a` into row `indices[r]` of a zero `out_rows x c` matrix.
    pub fn scatter_add_rows(&mut self, a: Var, indices: &[usize], out_rows: usize) -> Result<Var> {
        let x = self.value(a);
        if indices.len() != x.rows() {
            return Err(Error::shape("scatter_add_rows", x.shape(), Shape(indices.len(), 1)));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= out_rows) {
            return Err(Error::IndexOutOfRange(format!("scatter_add_rows: target row {bad} of {out_rows}")));
        }
        let mut v = Matrix::zeros(out_rows, x.cols());
        for (r, &i) in indices.iter().enumerate() {
            for (o, &s) in v.row_mut(i).iter_mut().zip(x.row(r)) {
                *o += s;
            }
        }
        let ng = self.needs(&[a.id]);
        Ok(self.push(Op::ScatterAddRows(a.id, indices.to_vec()), v, ng))
    }

    /// Contiguous block of `len` rows starting at `start`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::IndexOutOfRange(format!(
                "slice_rows: rows {start}..{} of a {} matrix",
                start + len,
                x.shape()
            )));
        }
        let c = x.cols();
        let v = Matrix::from_vec(len, c, x.as_slice()[start * c..(start + len) * c].to_vec())?;
        let ng = self.needs(&[a.id]);
        Ok(self.push(Op::SliceRows(a.id, start), v, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::shape("concat_cols", parts[0].shape(), p.shape()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let out = v.row_mut(r);
            let mut off = 0;
            for p in parts {
                let src = self.nodes[p.id].value.row(r);
                out[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let ng = self.needs(&ids);
        Ok(self.push(Op::ConcatCols(ids), v, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(p) = parts.iter().find(|p| p.cols != cols) {
            return Err(Error::shape("concat_rows", parts[0].shape(), p.shape()));
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.nodes[p.id].value.as_slice());
        }
        let v = Matrix::from_vec(rows, cols, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let ng = self.needs(&ids);
        Ok(self.push(Op::ConcatRows(ids), v, ng))
    }

    /// `a + 1 * row`, broadcasting a `1 x c` row over every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(Error::shape("add_row_broadcast", a.shape(), row.shape()));
        }
        let mut v = self.value(a).clone();
        let b = self.value(row).as_slice().to_vec();
        for r in 0..v.rows() {
            for (o, &bb) in v.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let ng = self.needs(&[a.id, row.id]);
        Ok(self.push(Op::AddRowBroadcast(a.id, row.id), v, ng))
    }

    /// Fused dense layer `x * w^T + b` with `w: out x in`, `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if x.cols != w.cols {
            return Err(Error::shape("affine", x.shape(), w.shape()));
        }
        if b.rows != 1 || b.cols != w.rows {
            return Err(Error::shape("affine", w.shape(), b.shape()));
        }
        let mut v = self.value(x).matmul_t(self.value(w))?;
        let bias = self.value(b).as_slice();
        for r in 0..v.rows() {
            for (o, &bb) in v.row_mut(r).iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let ng = self.needs(&[x.id, w.id, b.id]);
        Ok(self.push(Op::Affine { x: x.id, w: w.id, b: b.id }, v, ng))
    }

    /// `sum_i c_i * x_i` over same-shaped nodes.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::InvalidArgument("lincomb of zero terms".into()));
        };
        for &(v, _) in terms {
            self.same_shape("lincomb", first, v)?;
        }
        let mut out = Matrix::zeros(first.rows, first.cols);
        for &(v, c) in terms {
            out.axpy(c, &self.nodes[v.id].value);
        }
        let ids: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v.id, c)).collect();
        let ng = terms.iter().any(|(v, _)| self.nodes[v.id].needs_grad);
        Ok(self.push(Op::LinComb(ids), out, ng))
    }

    /// Records a primitive whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, parents: &[Var], value: Matrix) -> Var {
        let ids: Vec<usize> = parts_ids(parents);
        let ng = self.needs(&ids);
        self.push(Op::Custom(op, ids), value, ng)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.rows != 1 || root.cols != 1 {
            return Err(Error::InvalidArgument(format!("backward needs a scalar root, got {}", root.shape())));
        }
        let n = root.id + 1;
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[root.id] = Some(Matrix::scalar(1.0));

        for id in (0..n).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape()).collect();
        // Only leaves are interesting to callers, but intermediate adjoints are cheap to keep.
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, wants(*a), || g.clone());
                accumulate(grads, *b, wants(*b), || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, wants(*a), || g.clone());
                accumulate(grads, *b, wants(*b), || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, wants(*a), || g.zip_map(val(*b), |x, y| x * y));
                accumulate(grads, *b, wants(*b), || g.zip_map(val(*a), |x, y| x * y));
            }
            Op::MatMul(a, b) => {
                accumulate(grads, *a, wants(*a), || g.matmul_t(val(*b)).expect("shape"));
                accumulate(grads, *b, wants(*b), || val(*a).t_matmul(g).expect("shape"));
            }
            Op::Transpose(a) => accumulate(grads, *a, wants(*a), || g.transpose()),
            Op::Scale(a, f) => accumulate(grads, *a, wants(*a), || g.map(|x| x * f)),
            Op::Tanh(a) => accumulate(grads, *a, wants(*a), || g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
            Op::Exp(a) => accumulate(grads, *a, wants(*a), || g.zip_map(&node.value, |x, y| x * y)),
            Op::Log(a) => accumulate(grads, *a, wants(*a), || g.zip_map(val(*a), |x, y| x / y)),
            Op::Square(a) => accumulate(grads, *a, wants(*a), || g.zip_map(val(*a), |x, y| 2.0 * x * y)),
            Op::SumAll(a) => {
                let x = val(*a);
                accumulate(grads, *a, wants(*a), || Matrix::filled(x.rows(), x.cols(), g.item()))
            }
            Op::SumRows(a) => {
                let x = val(*a);
                accumulate(grads, *a, wants(*a), || Matrix::from_fn(x.rows(), x.cols(), |r, _| g.get(r, 0)))
            }
            Op::SelectRows(a, idx) => {
                let x = val(*a);
                accumulate(grads, *a, wants(*a), || {
                    let mut out = Matrix::zeros(x.rows(), x.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &s) in out.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += s;
                        }
                    }
                    out
                })
            }
            Op::ScatterAddRows(a, idx) => {
                let x = val(*a);
                accumulate(grads, *a, wants(*a), || {
                    let mut out = Matrix::zeros(x.rows(), x.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        out.row_mut(r).copy_from_slice(g.row(i));
                    }
                    out
                })
            }
            Op::SliceRows(a, start) => {
                let x = val(*a);
                accumulate(grads, *a, wants(*a), || {
                    let mut out = Matrix::zeros(x.rows(), x.cols());
                    let c = x.cols();
                    out.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                    out
                })
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    accumulate(grads, p, wants(p), || Matrix::from_fn(g.rows(), pc, |r, c| g.get(r, off + c)));
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let x = val(p);
                    let len = x.len();
                    accumulate(grads, p, wants(p), || {
                        Matrix::from_vec(x.rows(), x.cols(), g.as_slice()[off..off + len].to_vec()).expect("shape")
                    });
                    off += len;
                }
            }
            Op::AddRowBroadcast(a, b) => {
                accumulate(grads, *a, wants(*a), || g.clone());
                accumulate(grads, *b, wants(*b), || g.column_sums());
            }
            Op::Affine { x, w, b } => {
                accumulate(grads, *x, wants(*x), || g.matmul(val(*w)).expect("shape"));
                accumulate(grads, *w, wants(*w), || g.t_matmul(val(*x)).expect("shape"));
                accumulate(grads, *b, wants(*b), || g.column_sums());
            }
            Op::LinComb(terms) => {
                for &(p, c) in terms {
                    accumulate(grads, p, wants(p), || g.map(|x| x * c));
                }
            }
            Op::Custom(op, parents) => {
                let pv: Vec<&Matrix> = parents.iter().map(|&p| val(p)).collect();
                let needs: Vec<bool> = parents.iter().map(|&p| wants(p)).collect();
                let out = op.backward(&pv, &node.value, g, &needs);
                for ((&p, pg), need) in parents.iter().zip(out).zip(needs) {
                    if let (Some(pg), true) = (pg, need) {
                        debug_assert_eq!(pg.shape(), val(p).shape(), "{} backward", op.name());
                        accumulate(grads, p, true, || pg);
                    }
                }
            }
        }
    }
}

fn parts_ids(parts: &[Var]) -> Vec<usize> {
    parts.iter().map(|p| p.id).collect()
}

#[inline]
fn accumulate(grads: &mut [Option<Matrix>], id: usize, wanted: bool, f: impl FnOnce() -> Matrix) {
    if !wanted {
        return;
    }
    let g = f();
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
