//! Dense row-major matrices of `f64`.
//!
//! `Matrix` is the batch container used throughout the crate: rows are
//! samples, columns are features. Kernels are plain sequential loops, so a
//! given input always produces bitwise-identical output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default guard used by [`Matrix::l2_normalize_rows`] callers.
pub const NORM_EPS: f64 = 1e-12;

const UNIT_NORM_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Entrywise binary operation selector for [`Matrix::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Right-hand side of an entrywise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Matrix(&'a Matrix),
    Scalar(f64),
}

impl ElemOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElemOp::Add => a + b,
            ElemOp::Sub => a - b,
            ElemOp::Mul => a * b,
            ElemOp::Div => a / b,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the row-major buffer. The length cannot change.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no row data anyway
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dims("matmul", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `selfᵀ * other`, without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dims("t_matmul", self.shape(), other.shape()));
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dims("matmul_t", self.shape(), other.shape()));
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.push(dot(a, other.row(j)));
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn elementwise(&self, op: ElemOp, rhs: Operand<'_>) -> Result<Matrix> {
        let data = match rhs {
            Operand::Scalar(s) => self.data.iter().map(|&a| op.apply(a, s)).collect(),
            Operand::Matrix(b) => {
                if b.shape() != self.shape() {
                    return Err(Error::dims("elementwise", self.shape(), b.shape()));
                }
                self.data
                    .iter()
                    .zip(&b.data)
                    .map(|(&a, &b)| op.apply(a, b))
                    .collect()
            }
        };
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.elementwise(ElemOp::Add, Operand::Matrix(other))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.elementwise(ElemOp::Sub, Operand::Matrix(other))
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.elementwise(ElemOp::Mul, Operand::Matrix(other))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(Error::dims("add_assign", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(Error::dims("axpy", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Adds `v` to every row.
    pub fn add_row_broadcast(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::dims("add_row_broadcast", self.shape(), (1, v.len())));
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (a, b) in row.iter_mut().zip(v) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Per-column sums (sum over the batch).
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.iter_rows().map(|r| dot(r, r).sqrt()).collect()
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    ///
    /// Rows whose norm is already 1 up to rounding are returned untouched, which
    /// makes the operation exactly idempotent.
    pub fn l2_normalize_rows(&self, eps: f64) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            let norm = dot(row, row).sqrt().max(eps);
            if (norm - 1.0).abs() <= UNIT_NORM_TOL {
                continue;
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        out
    }

    /// Gathers the given rows into a new matrix, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices vertically.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dims("vstack", (rows, cols), p.shape()));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn squared_norm(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    #[test]
    fn identity_is_neutral() {
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 7.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn two_by_two_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, naive_matmul(&a, &b));
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_dimension_mismatch_names_shapes() {
        let a = Matrix::zeros(2, 3);
        let err = a.matmul(&Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::from_fn(3, 4, |i, j| (i as f64) - 0.5 * j as f64);
        let b = Matrix::from_fn(3, 2, |i, j| (i * j) as f64 + 1.0);
        assert_eq!(a.t_matmul(&b).unwrap(), naive_matmul(&a.transpose(), &b));
        let c = Matrix::from_fn(5, 4, |i, j| (i + 2 * j) as f64 * 0.1);
        assert_eq!(a.matmul_t(&c).unwrap(), naive_matmul(&a, &c.transpose()));
    }

    #[test]
    fn normalize_rows() {
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]).unwrap();
        let n = m.l2_normalize_rows(NORM_EPS);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert_eq!(n.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn elementwise_ops() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(m.add(&Matrix::zeros(1, 2)).unwrap(), m);
        assert_eq!(m.sub(&m).unwrap().data(), &[0.0, 0.0]);
        let half = Matrix::row_vector(&[2.0, 3.0])
            .elementwise(ElemOp::Mul, Operand::Scalar(0.5))
            .unwrap();
        assert_eq!(half.data(), &[1.0, 1.5]);
        assert!(m.add(&Matrix::zeros(2, 1)).is_err());
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative((a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6)
            .prop_flat_map(|(n, k, m, p)| (matrix(n, k), matrix(k, m), matrix(m, p))))
        {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.data().iter().chain(right.data()).fold(1.0f64, |s, v| s.max(v.abs()));
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn normalization_is_idempotent(m in matrix(4, 5)) {
            let once = m.l2_normalize_rows(NORM_EPS);
            let twice = once.l2_normalize_rows(NORM_EPS);
            for (i, norm) in m.row_norms().into_iter().enumerate() {
                if norm > NORM_EPS {
                    prop_assert_eq!(once.row(i), twice.row(i));
                }
            }
        }

        #[test]
        fn unit_rows_bridge_distance_and_cosine(m in matrix(2, 6)) {
            prop_assume!(m.row_norms().iter().all(|&n| n > 1e-3));
            let u = m.l2_normalize_rows(NORM_EPS);
            let d2 = squared_distance(u.row(0), u.row(1));
            let c = dot(u.row(0), u.row(1));
            prop_assert!((d2 - (2.0 - 2.0 * c)).abs() <= 1e-12);
        }
    }
}
