//! A define-by-run tape for reverse-mode differentiation over [`Tensor2D`].
//!
//! Values are computed eagerly as nodes are pushed; [`Graph::backward`] walks
//! the tape once in reverse. Parameters enter through [`Graph::param`], which
//! caches one leaf per name so shared weights accumulate a single gradient.

use std::collections::HashMap;

use crate::error::{HudError, Result};
use crate::params::ParameterStore;
use crate::tensor::{self, dot, Tensor2D};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Standardize { x: Var, eps: f64 },
    L2NormalizeRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    RepeatRows { x: Var, times: usize },
    MeanRows(Var),
    RowMax { x: Var, argmax: Vec<usize> },
    GatherCols { x: Var, index: Vec<usize> },
    RowDot(Var, Var),
    Transpose(Var),
    Sum(Var),
    Diag(Var),
}

struct Node {
    value: Tensor2D,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2D> {
        self.grads[v.0].as_ref()
    }

    /// `(name, gradient)` for every parameter that was read on the tape.
    /// Parameters the loss does not depend on get a zero matrix.
    pub fn params<'a>(&'a self, g: &'a Graph<'_>) -> impl Iterator<Item = (&'a str, Tensor2D)> + 'a {
        self.params.iter().map(move |(name, v)| {
            let grad = self.grads[v.0].clone().unwrap_or_else(|| {
                let (r, c) = g.value(*v).shape();
                Tensor2D::zeros(r, c)
            });
            (name.as_str(), grad)
        })
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, g: &Graph<'_>, store: &mut ParameterStore) -> Result<()> {
        for (name, grad) in self.params(g) {
            store.accumulate_grad(name, &grad)?;
        }
        Ok(())
    }
}

fn shape_err(op: &'static str, a: &Tensor2D, b: &Tensor2D) -> HudError {
    HudError::Shape {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = self.store.value(name)?.clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    /// Names of parameters that have been read so far.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn broadcast_row(&mut self, a: Var, row: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor2D> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err(op, x, r));
        }
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o = f(*o, *b);
            }
        }
        Ok(out)
    }

    /// `a + 1·row` for a `1 × cols` row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.broadcast_row(a, row, "add_row", |x, b| x + b)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `a ⊙ 1·row` for a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.broadcast_row(a, row, "mul_row", |x, b| x * b)?;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = tensor::log_softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::LogSoftmaxRows(a)))
    }

    /// Per-row `(x - mean) / sqrt(var + eps)`, population variance.
    pub fn standardize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut out = x.clone();
        for i in 0..x.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        self.push(out, Op::Standardize { x: a, eps })
    }

    /// Layer normalization with learned `1 × cols` gain and shift.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let z = self.standardize_rows(a, 1e-5);
        let scaled = self.mul_row(z, gamma)?;
        self.add_row(scaled, beta)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let out = tensor::l2_normalize_rows(self.value(a));
        self.push(out, Op::L2NormalizeRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| HudError::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor2D::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| HudError::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor2D::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(HudError::shape(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, x.rows()),
            ));
        }
        let cols = x.cols();
        let out = Tensor2D::new(len, cols, x.data()[start * cols..(start + len) * cols].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x: a, start }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(HudError::shape(
                "slice_cols",
                format!("cols {start}..{} of {}", start + len, x.cols()),
            ));
        }
        let data = x
            .iter_rows()
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let out = Tensor2D::new(x.rows(), len, data)?;
        Ok(self.push(out, Op::SliceCols { x: a, start }))
    }

    /// Stacks `times` copies of `a` along the row axis.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(HudError::InvalidArgument("repeat_rows with times = 0".into()));
        }
        let x = self.value(a);
        let data = x.data().repeat(times);
        let out = Tensor2D::new(x.rows() * times, x.cols(), data)?;
        Ok(self.push(out, Op::RepeatRows { x: a, times }))
    }

    /// Column means as a `1 × cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(HudError::InvalidArgument("mean_rows of an empty matrix".into()));
        }
        let mut out = vec![0.0; x.cols()];
        for r in x.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        let n = x.rows() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let out = Tensor2D::new(1, x.cols(), out)?;
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Per-row maximum as a `rows × 1` column. Ties go to the first index.
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(HudError::InvalidArgument("row_max over zero columns".into()));
        }
        let mut argmax = Vec::with_capacity(x.rows());
        let mut out = Vec::with_capacity(x.rows());
        for r in x.iter_rows() {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            argmax.push(best);
            out.push(r[best]);
        }
        let out = Tensor2D::new(x.rows(), 1, out)?;
        Ok(self.push(out, Op::RowMax { x: a, argmax }))
    }

    /// Max over each run of `block` consecutive columns:
    /// `out[i, j] = max_c a[i, j·block + c]`, ties to the first column.
    pub fn block_max(&mut self, a: Var, block: usize) -> Result<Var> {
        let x = self.value(a);
        if block == 0 || !x.cols().is_multiple_of(block) {
            return Err(HudError::shape(
                "block_max",
                format!("{} columns in blocks of {block}", x.cols()),
            ));
        }
        let blocks = x.cols() / block;
        let mut index = Vec::with_capacity(x.rows() * blocks);
        for r in x.iter_rows() {
            for j in 0..blocks {
                let mut best = j * block;
                for c in best + 1..(j + 1) * block {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                index.push(best);
            }
        }
        self.gather_cols(a, blocks, index)
    }

    /// Diagonal of each `rows × rows` column block:
    /// `out[i, j] = a[i, j·rows + i]`.
    pub fn block_diag(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if rows == 0 || cols % rows != 0 {
            return Err(HudError::shape(
                "block_diag",
                format!("{cols} columns in blocks of {rows}"),
            ));
        }
        let blocks = cols / rows;
        let index = (0..rows).flat_map(|i| (0..blocks).map(move |j| j * rows + i)).collect();
        self.gather_cols(a, blocks, index)
    }

    fn gather_cols(&mut self, a: Var, out_cols: usize, index: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        let data = index.iter().enumerate().map(|(n, &c)| x.get(n / out_cols, c)).collect();
        let out = Tensor2D::new(x.rows(), out_cols, data)?;
        Ok(self.push(out, Op::GatherCols { x: a, index }))
    }

    /// Row-wise inner products `⟨a_i, b_i⟩` as a `rows × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("row_dot", x, y));
        }
        let data = x.iter_rows().zip(y.iter_rows()).map(|(p, q)| dot(p, q)).collect();
        let out = Tensor2D::new(x.rows(), 1, data)?;
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor2D::row_vector(&[self.value(a).sum()]);
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Diagonal of a square matrix as an `n × 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != x.cols() {
            return Err(HudError::shape("diag", format!("{:?} is not square", x.shape())));
        }
        let data = (0..x.rows()).map(|i| x.get(i, i)).collect();
        let out = Tensor2D::new(x.rows(), 1, data)?;
        Ok(self.push(out, Op::Diag(a)))
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(HudError::shape(
                "backward",
                format!("loss has shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor2D>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2D::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Constant | Op::Param) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&g, self.value(*b))?;
                    let db = tensor::matmul_tn(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    // out = A Bᵀ: dA = G B, dB = Gᵀ A
                    let da = tensor::matmul(&g, self.value(*b))?;
                    let db = tensor::matmul_tn(&g, self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), "mul", |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), "mul", |x, y| x * y)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let x = self.value(*a);
                    let mut da = g.clone();
                    let mut dr = vec![0.0; r.cols()];
                    for i in 0..g.rows() {
                        for (j, v) in da.row_mut(i).iter_mut().enumerate() {
                            dr[j] += *v * x.get(i, j);
                            *v *= r.data()[j];
                        }
                    }
                    accumulate(&mut grads, *row, Tensor2D::row_vector(&dr));
                    accumulate(&mut grads, *a, da);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|v| v * c)),
                Op::Sigmoid(a) => {
                    let da = g.zip_map(out, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(out, "tanh", |gv, y| gv * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let da = g.zip_map(out, "exp", |gv, y| gv * y)?;
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        let y = out.row(i);
                        let inner = dot(g.row(i), y);
                        for (d, yv) in da.row_mut(i).iter_mut().zip(y) {
                            *d = yv * (*d - inner);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        let total: f64 = g.row(i).iter().sum();
                        for (d, lv) in da.row_mut(i).iter_mut().zip(out.row(i)) {
                            *d -= lv.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Standardize { x, eps } => {
                    let xv = self.value(*x);
                    let n = xv.cols() as f64;
                    let mut dx = g.clone();
                    for i in 0..g.rows() {
                        let row = xv.row(i);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let y = out.row(i);
                        let g_mean = g.row(i).iter().sum::<f64>() / n;
                        let gy_mean = dot(g.row(i), y) / n;
                        for (d, yv) in dx.row_mut(i).iter_mut().zip(y) {
                            *d = inv * (*d - g_mean - yv * gy_mean);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::L2NormalizeRows(a) => {
                    let xv = self.value(*a);
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        let norm = dot(xv.row(i), xv.row(i)).sqrt().max(1e-12);
                        let y = out.row(i);
                        let gy = dot(g.row(i), y);
                        for (d, yv) in da.row_mut(i).iter_mut().zip(y) {
                            *d = (*d - yv * gy) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let piece = Tensor2D::new(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?;
                        accumulate(&mut grads, p, piece);
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let data = g
                            .iter_rows()
                            .flat_map(|row| row[offset..offset + c].iter().copied())
                            .collect();
                        accumulate(&mut grads, p, Tensor2D::new(r, c, data)?);
                        offset += c;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(r, c);
                    dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(r, c);
                    for i in 0..r {
                        dx.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RepeatRows { x, times } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(r, c);
                    for k in 0..*times {
                        for (d, v) in dx.data_mut().iter_mut().zip(&g.data()[k * r * c..(k + 1) * r * c]) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(a) => {
                    let (r, _) = self.shape(*a);
                    let scaled = g.map(|v| v / r as f64);
                    let mut da = Tensor2D::zeros(r, g.cols());
                    for i in 0..r {
                        da.row_mut(i).copy_from_slice(scaled.data());
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::RowMax { x, argmax } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(r, c);
                    for (i, &j) in argmax.iter().enumerate() {
                        dx.set(i, j, g.data()[i]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherCols { x, index } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(r, c);
                    let out_cols = g.cols();
                    for (n, &col) in index.iter().enumerate() {
                        let i = n / out_cols;
                        dx.set(i, col, dx.get(i, col) + g.data()[n]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = bv.clone();
                    let mut db = av.clone();
                    for i in 0..g.rows() {
                        let gi = g.data()[i];
                        da.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                        db.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor2D::filled(r, c, g.data()[0]));
                }
                Op::Diag(a) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Tensor2D::zeros(r, c);
                    for i in 0..r {
                        da.set(i, i, g.data()[i]);
                    }
                    accumulate(&mut grads, *a, da);
                }
            }
        }

        let mut params: Vec<(String, Var)> = self.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], v: Var, g: Tensor2D) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor2D) -> Tensor2D {
    let mut out = vec![0.0; g.cols()];
    for r in g.iter_rows() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    Tensor2D::row_vector(&out)
}
