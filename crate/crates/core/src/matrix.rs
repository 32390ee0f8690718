//! Dense row-major `f64` matrices.
//!
//! This is deliberately a small, dependency-free implementation: every
//! reduction runs in ascending index order so results are bit-stable across
//! runs and platforms, which the reproducibility contracts elsewhere in the
//! crate rely on. Performance is adequate for the problem sizes here; BLAS
//! integration is a non-goal.

use crate::error::{Result, SculptError};

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        assert!(value.is_finite(), "matrix entries must be finite");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Rejects wrong entry counts and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SculptError::parameter(
                "shape",
                format!("dimensions must be positive, got {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(SculptError::parameter(
                "data",
                format!(
                    "expected {} entries for a {rows}x{cols} matrix, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(SculptError::parameter(
                "data",
                format!("non-finite entry {bad}"),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(SculptError::parameter("rows", "empty row set".to_string()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SculptError::parameter("rows", "ragged rows".to_string()));
        }
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Matrix product. Summation runs over the inner index in ascending
    /// order, so the result is deterministic.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(SculptError::dimension("matmul", self.shape(), rhs.shape()));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &l) in lhs_row.iter().enumerate() {
                if l == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &r) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += l * r;
                }
            }
        }
        Ok(out)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(SculptError::dimension(
                "hadamard",
                self.shape(),
                rhs.shape(),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(SculptError::dimension("add", self.shape(), rhs.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(SculptError::dimension("sub", self.shape(), rhs.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| c * v)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// sqrt of the sum of squared entries, accumulated in index order.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of absolute entries.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Fraction of entries that are exactly nonzero.
    pub fn nonzero_fraction(&self) -> f64 {
        let nz = self.data.iter().filter(|&&v| v != 0.0).count();
        nz as f64 / self.data.len() as f64
    }

    /// True when every entry equals the corresponding entry of `rhs` bit for
    /// bit (distinguishes -0.0 from 0.0, which `==` does not).
    pub fn bit_eq(&self, rhs: &Matrix) -> bool {
        self.shape() == rhs.shape()
            && self
                .data
                .iter()
                .zip(&rhs.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_is_exact() {
        let x = Matrix::from_rows(&[&[1.5, -2.25], &[0.125, 4.0]]).unwrap();
        let i = Matrix::identity(2);
        assert!(i.matmul(&x).unwrap().bit_eq(&x));
        assert!(x.matmul(&i).unwrap().bit_eq(&x));
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Matrix::zeros(3, 2);
        let x = Matrix::from_rows(&[&[1.0, -1.0, 2.0], &[5.0, 0.5, -3.0]]).unwrap();
        let out = z.matmul(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "got: {msg}");
    }

    #[test]
    fn hadamard_examples() {
        let ones = Matrix::filled(2, 2, 1.0);
        let x = Matrix::from_rows(&[&[3.0, 4.0], &[5.0, 12.0]]).unwrap();
        assert!(ones.hadamard(&x).unwrap().bit_eq(&x));

        let eye = Matrix::identity(2);
        let masked = eye.hadamard(&x).unwrap();
        assert_eq!(masked.data(), &[3.0, 0.0, 0.0, 12.0]);

        let z = Matrix::zeros(2, 2);
        assert!(x.hadamard(&z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Matrix::zeros(3, 4).frobenius_norm(), 0.0);
        let m = Matrix::from_rows(&[&[3.0, 4.0]]).unwrap();
        assert!((m.frobenius_norm() - 5.0).abs() < 1e-15);
        let m = Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 12.0]]).unwrap();
        assert!((m.frobenius_norm() - 153f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(Matrix::zeros(2, 2).l1_norm(), 0.0);
        let m = Matrix::from_rows(&[&[1.0, -2.0], &[3.0, -4.0]]).unwrap();
        assert_eq!(m.l1_norm(), 10.0);
        assert_eq!(Matrix::filled(3, 5, 1.0).l1_norm(), 15.0);
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
