//! Dense row-major matrices.
//!
//! Vectors are 1-column matrices and batches are matrices with one example
//! per column, so every shape check goes through the same code.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(
            rows > 0 && cols > 0,
            "matrix dimensions must be positive, got {rows}x{cols}"
        );
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(n_rows, n_cols, data)
    }

    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// i.i.d. normal entries with the given mean and standard deviation.
    pub fn gaussian(
        rows: usize,
        cols: usize,
        mean: f64,
        std: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() {
            return Err(Error::Parameter(format!(
                "standard deviation must be finite and >= 0, got {std}"
            )));
        }
        if !mean.is_finite() {
            return Err(Error::Parameter(format!("mean must be finite, got {mean}")));
        }
        let mut m = Self::zeros(rows, cols);
        for v in &mut m.data {
            let z: f64 = StandardNormal.sample(rng.inner_mut());
            *v = mean + std * z;
        }
        Ok(m)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
    }

    fn check_same(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dimension(op, self.shape(), other.shape()))
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dimension("matmul", self.shape(), other.shape()));
        }
        let (n, m) = (self.rows, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
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

    /// `self * otherᵀ` without materializing the transpose.
    ///
    /// Entry (i, j) is the dot product of row i of `self` with row j of
    /// `other`, summed in column order, so `a.matmul_nt(b)` is bit-for-bit the
    /// transpose of `b.matmul_nt(a)`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dimension("matmul_nt", self.shape(), other.shape()));
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

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dimension("matmul_tn", self.shape(), other.shape()));
        }
        let (n, m) = (self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(b_row) {
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

    pub fn transpose(&self) -> Matrix {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.data[r * self.cols + c]);
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Frobenius inner product ⟨self, other⟩.
    pub fn inner(&self, other: &Matrix) -> Result<f64> {
        self.check_same(other, "inner")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn mean_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same(other, "zip_map")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Adds a `rows x 1` column to every column of `self`.
    pub fn add_column(&self, column: &Matrix) -> Result<Matrix> {
        if column.cols != 1 || column.rows != self.rows {
            return Err(Error::dimension("add_column", self.shape(), column.shape()));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let b = column.data[r];
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Mean over columns, as a `rows x 1` column.
    pub fn row_means(&self) -> Matrix {
        let n = self.cols as f64;
        let data = (0..self.rows)
            .map(|r| self.row(r).iter().sum::<f64>() / n)
            .collect();
        Matrix {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    /// Each row minus its own mean across columns.
    pub fn center_rows(&self) -> Matrix {
        let means = self.row_means();
        let mut out = self.clone();
        for r in 0..self.rows {
            let m = means.data[r];
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v -= m;
            }
        }
        out
    }

    /// Gathers the given columns, in order, into a new matrix.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Matrix> {
        if indices.is_empty() {
            return Err(Error::Shape("cannot select zero columns".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.cols) {
            return Err(Error::Shape(format!(
                "column {bad} out of range for {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(indices.iter().map(|&c| row[c]));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: indices.len(),
            data,
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
