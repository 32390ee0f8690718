//! Binary occupancy patterns and boolean product-sparsity computation.
//!
//! A product entry `(i, j)` of `B * A` can be structurally nonzero only if
//! some rank index `k` has both `B[i,k]` and `A[k,j]` occupied. Packing the
//! rank axis into 64-bit words turns that existence test into a handful of
//! `AND`s per product cell, which keeps the Monte Carlo validation fast even
//! at 2048x2048.

use crate::error::{Result, SculptError};
use crate::matrix::Matrix;

/// Bit-per-entry occupancy pattern, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryPattern {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
}

impl BinaryPattern {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "pattern dimensions must be positive");
        let words = (rows * cols + 63) / 64;
        BinaryPattern {
            rows,
            cols,
            bits: vec![0; words],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        let idx = i * self.cols + j;
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let idx = i * self.cols + j;
        if value {
            self.bits[idx / 64] |= 1 << (idx % 64);
        } else {
            self.bits[idx / 64] &= !(1 << (idx % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / (self.rows * self.cols) as f64
    }

    /// Interprets a 0/1 matrix (e.g. a pruning mask) as a pattern.
    pub fn from_mask(mask: &Matrix) -> Self {
        let mut p = BinaryPattern::zeros(mask.rows(), mask.cols());
        for i in 0..mask.rows() {
            for j in 0..mask.cols() {
                if mask.get(i, j) != 0.0 {
                    p.set(i, j, true);
                }
            }
        }
        p
    }
}

/// Fraction of `(i, j)` cells of the boolean product `mb * ma` that are
/// reachable through at least one shared rank index. Purely structural: no
/// numeric cancellation is modeled.
pub fn product_pattern_sparsity(mb: &BinaryPattern, ma: &BinaryPattern) -> Result<f64> {
    if mb.cols() != ma.rows() {
        return Err(SculptError::dimension(
            "product_pattern_sparsity",
            (mb.rows(), mb.cols()),
            (ma.rows(), ma.cols()),
        ));
    }
    let (p, r, q) = (mb.rows(), mb.cols(), ma.cols());
    let words = (r + 63) / 64;

    // Pack B's rows and A's columns along the rank axis.
    let mut row_masks = vec![0u64; p * words];
    for i in 0..p {
        for k in 0..r {
            if mb.get(i, k) {
                row_masks[i * words + k / 64] |= 1 << (k % 64);
            }
        }
    }
    let mut col_masks = vec![0u64; q * words];
    for j in 0..q {
        for k in 0..r {
            if ma.get(k, j) {
                col_masks[j * words + k / 64] |= 1 << (k % 64);
            }
        }
    }

    let mut nonzero = 0usize;
    for i in 0..p {
        let rw = &row_masks[i * words..(i + 1) * words];
        for j in 0..q {
            let cw = &col_masks[j * words..(j + 1) * words];
            if rw.iter().zip(cw).any(|(a, b)| a & b != 0) {
                nonzero += 1;
            }
        }
    }
    Ok(nonzero as f64 / (p * q) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(rows: usize, cols: usize) -> BinaryPattern {
        let mut p = BinaryPattern::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                p.set(i, j, true);
            }
        }
        p
    }

    #[test]
    fn all_ones_product_is_dense() {
        let mb = filled(3, 2);
        let ma = filled(2, 5);
        assert_eq!(product_pattern_sparsity(&mb, &ma).unwrap(), 1.0);
    }

    #[test]
    fn single_reachable_cell() {
        // mb = [[1],[0]], ma = [[1,0]] -> only (0,0) reachable out of 4.
        let mut mb = BinaryPattern::zeros(2, 1);
        mb.set(0, 0, true);
        let mut ma = BinaryPattern::zeros(1, 2);
        ma.set(0, 0, true);
        assert_eq!(product_pattern_sparsity(&mb, &ma).unwrap(), 0.25);
    }

    #[test]
    fn empty_factor_gives_zero() {
        let mb = filled(4, 3);
        let ma = BinaryPattern::zeros(3, 4);
        assert_eq!(product_pattern_sparsity(&mb, &ma).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mb = filled(2, 3);
        let ma = filled(2, 2);
        assert!(product_pattern_sparsity(&mb, &ma).is_err());
    }

    #[test]
    fn matches_brute_force_on_wide_rank() {
        // Rank 70 crosses the single-word boundary in the packed masks.
        let mut rng = crate::rng::RandomStream::new(123, 0);
        let (p, r, q) = (17, 70, 13);
        let mut mb = BinaryPattern::zeros(p, r);
        let mut ma = BinaryPattern::zeros(r, q);
        for i in 0..p {
            for k in 0..r {
                mb.set(i, k, rng.bernoulli(0.2));
            }
        }
        for k in 0..r {
            for j in 0..q {
                ma.set(k, j, rng.bernoulli(0.2));
            }
        }
        let fast = product_pattern_sparsity(&mb, &ma).unwrap();
        let mut nz = 0;
        for i in 0..p {
            for j in 0..q {
                if (0..r).any(|k| mb.get(i, k) && ma.get(k, j)) {
                    nz += 1;
                }
            }
        }
        assert_eq!(fast, nz as f64 / (p * q) as f64);
    }
}
