//! Dense row-major matrices and the forward kernels shared by the tape and
//! the pure (non-differentiable) evaluation paths.

use crate::error::{HudError, Result};

/// A dense `rows × cols` matrix stored row-major in 64-bit floats.
///
/// Vectors are represented as `1 × n` matrices throughout the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(HudError::shape(
                "Tensor2D::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(HudError::shape(
                    "Tensor2D::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(HudError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }
}

/// Inner product with a fixed left-to-right accumulation order.
///
/// Every dot product in the crate goes through here so that two routes to the
/// same score (matrix product vs. row-wise product) agree bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `a · b`
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(HudError::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor2D::new(m, n, out)
}

/// `a · bᵀ`; entry `(i, j)` is `dot(a_i, b_j)`.
pub fn matmul_nt(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.cols {
        return Err(HudError::shape(
            "matmul_nt",
            format!("{:?} x {:?}^T", a.shape(), b.shape()),
        ));
    }
    let mut out = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.push(dot(ar, b.row(j)));
        }
    }
    Tensor2D::new(a.rows, b.rows, out)
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.rows != b.rows {
        return Err(HudError::shape(
            "matmul_tn",
            format!("{:?}^T x {:?}", a.shape(), b.shape()),
        ));
    }
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor2D::new(m, n, out)
}

fn softmax_slice(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor2D) -> Result<Tensor2D> {
    if !x.is_finite() {
        return Err(HudError::NonFinite("softmax_rows"));
    }
    let mut out = Tensor2D::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let (src, dst) = (x.row(i), &mut out.data[i * x.cols..(i + 1) * x.cols]);
        softmax_slice(src, dst);
    }
    Ok(out)
}

/// Row-wise log-softmax computed as `x - max - ln Σ exp(x - max)`.
pub fn log_softmax_rows(x: &Tensor2D) -> Result<Tensor2D> {
    if !x.is_finite() {
        return Err(HudError::NonFinite("log_softmax_rows"));
    }
    let mut out = Tensor2D::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
            *o = v - max - lse;
        }
    }
    Ok(out)
}

/// `KL(p ‖ q) = Σ p_i ln(p_i / q_i)` with the convention `0 · ln(0 / q) = 0`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(HudError::shape(
            "kl_categorical",
            format!("|p| = {}, |q| = {}", p.len(), q.len()),
        ));
    }
    for (name, dist) in [("p", p), ("q", q)] {
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 || dist.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(HudError::InvalidArgument(format!(
                "{name} is not a probability vector (sum {total})"
            )));
        }
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(HudError::InfiniteDivergence { index: i });
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise L2 normalization; rows with norm below `1e-12` are left scaled by `1e12`.
pub fn l2_normalize_rows(x: &Tensor2D) -> Tensor2D {
    let mut out = x.clone();
    for i in 0..x.rows {
        let norm = dot(x.row(i), x.row(i)).sqrt().max(1e-12);
        for v in out.row_mut(i) {
            *v /= norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor2D::row_vector(&[0.0, 0.0, 0.0]);
        let y = softmax_rows(&x).unwrap();
        for v in y.data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_reference_values() {
        let y = softmax_rows(&Tensor2D::row_vector(&[1.0, 2.0, 3.0])).unwrap();
        // e^k / (e + e^2 + e^3)
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (a, b) in y.data().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(y.data()[0], 0.09003, epsilon = 5e-6);
        assert_abs_diff_eq!(y.data()[1], 0.24473, epsilon = 5e-6);
        assert_abs_diff_eq!(y.data()[2], 0.66524, epsilon = 5e-6);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax_rows(&Tensor2D::row_vector(&[0.0, 0.7])).unwrap();
        let b = softmax_rows(&Tensor2D::row_vector(&[123.5, 124.2])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor2D::row_vector(&[0.0, f64::NAN]);
        assert_eq!(softmax_rows(&x), Err(HudError::NonFinite("softmax_rows")));
    }

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(kl_categorical(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let kl = kl_categorical(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_abs_diff_eq!(kl, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(kl, 0.143841, epsilon = 5e-7);
    }

    #[test]
    fn kl_infinite_divergence() {
        assert_eq!(
            kl_categorical(&[0.5, 0.5], &[1.0, 0.0]),
            Err(HudError::InfiniteDivergence { index: 1 })
        );
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor2D::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor2D::from_rows(&[[1.0, 0.5], [0.0, -1.0], [2.0, 1.0]]).unwrap();
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(ab.data(), &[7.0, 1.5, 16.0, 3.0]);
        assert_eq!(matmul_nt(&a, &b.transpose()).unwrap(), ab);
        assert_eq!(matmul_tn(&a.transpose(), &b).unwrap(), ab);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor2D::new(2, 2, vec![0.0; 3]).is_err());
    }
}
