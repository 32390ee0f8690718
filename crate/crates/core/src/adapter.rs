//! Low-rank adapters with one-shot magnitude masks.
//!
//! An adapter holds the factor pair `(B, A)` of a weight delta
//! `dW = gamma * B * A` with `B: p x r`, `A: r x q`. Pruning keeps the
//! largest-magnitude fraction `s` of each factor's entries:
//!
//! ```text
//! M_A = mask(A, s_A)    M_B = mask(B, s_B)
//! A~  = M_A . A         B~  = M_B . B        (entrywise)
//! ```
//!
//! `s` is the *retained* fraction throughout this crate (the share of entries
//! kept nonzero), so `s = 1` keeps everything and `s = 0` prunes everything.

use crate::error::{Result, SculptError};
use crate::matrix::Matrix;
use crate::pattern::{product_pattern_sparsity, BinaryPattern};
use crate::rng::RandomStream;

/// Standard deviation used to initialize the `A` factor.
pub const INIT_STD: f64 = 0.02;

/// Binary magnitude mask retaining exactly `round(s * numel)` entries.
///
/// The retained positions are the largest by absolute value; ties go to the
/// lower flat index, so the result is deterministic and the retained set at a
/// lower density is always a subset of the set at a higher one.
pub fn build_mask(x: &Matrix, retained_density: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&retained_density) {
        return Err(SculptError::parameter(
            "retained_density",
            format!("must lie in [0, 1], got {retained_density}"),
        ));
    }
    let n = x.numel();
    let k = (retained_density * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let data = x.data();
    order.sort_by(|&i, &j| {
        data[j]
            .abs()
            .partial_cmp(&data[i].abs())
            .expect("finite entries")
            .then(i.cmp(&j))
    });
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    for &idx in order.iter().take(k) {
        mask.data_mut()[idx] = 1.0;
    }
    Ok(mask)
}

/// Low-rank factor pair with optional pruning masks.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    b: Matrix,
    a: Matrix,
    rank: usize,
    scaling: f64,
    mask_b: Option<Matrix>,
    mask_a: Option<Matrix>,
    retained_b: Option<f64>,
    retained_a: Option<f64>,
}

impl LoraAdapter {
    /// Wraps an existing factor pair. `b` is `p x r`, `a` is `r x q`.
    pub fn new(b: Matrix, a: Matrix, scaling: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(SculptError::dimension("adapter factors", b.shape(), a.shape()));
        }
        let rank = b.cols();
        if rank > b.rows().min(a.cols()) {
            return Err(SculptError::parameter(
                "rank",
                format!(
                    "rank {rank} exceeds min(p, q) = {}",
                    b.rows().min(a.cols())
                ),
            ));
        }
        if scaling <= 0.0 || !scaling.is_finite() {
            return Err(SculptError::parameter(
                "scaling",
                format!("must be a positive real, got {scaling}"),
            ));
        }
        Ok(LoraAdapter {
            b,
            a,
            rank,
            scaling,
            mask_b: None,
            mask_a: None,
            retained_b: None,
            retained_a: None,
        })
    }

    /// Fresh adapter for a `p x q` weight: `A ~ N(0, INIT_STD^2)`, `B = 0`,
    /// no masks. The delta is exactly zero at initialization.
    pub fn init(rng: &mut RandomStream, p: usize, q: usize, rank: usize, scaling: f64) -> Result<Self> {
        if rank == 0 || rank > p.min(q) {
            return Err(SculptError::parameter(
                "rank",
                format!("rank {rank} invalid for a {p}x{q} weight"),
            ));
        }
        let a = rng.sample_gaussian(rank, q, INIT_STD);
        let b = Matrix::zeros(p, rank);
        LoraAdapter::new(b, a, scaling)
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn a_mut(&mut self) -> &mut Matrix {
        &mut self.a
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    /// Output/input dimensions `(p, q)` of the delta.
    pub fn shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    pub fn has_masks(&self) -> bool {
        self.mask_b.is_some() && self.mask_a.is_some()
    }

    pub fn mask_b(&self) -> Option<&Matrix> {
        self.mask_b.as_ref()
    }

    pub fn mask_a(&self) -> Option<&Matrix> {
        self.mask_a.as_ref()
    }

    /// Retained densities `(s_B, s_A)` recorded when the masks were built.
    pub fn retained_densities(&self) -> Option<(f64, f64)> {
        match (self.retained_b, self.retained_a) {
            (Some(b), Some(a)) => Some((b, a)),
            _ => None,
        }
    }

    /// One-shot magnitude masks on both factors at the given densities.
    pub fn build_masks(&mut self, s_b: f64, s_a: f64) -> Result<()> {
        self.mask_b = Some(build_mask(&self.b, s_b)?);
        self.mask_a = Some(build_mask(&self.a, s_a)?);
        self.retained_b = Some(s_b);
        self.retained_a = Some(s_a);
        Ok(())
    }

    /// Installs externally built masks (entries must be 0/1).
    pub fn set_masks(&mut self, mask_b: Matrix, mask_a: Matrix) -> Result<()> {
        if mask_b.shape() != self.b.shape() || mask_a.shape() != self.a.shape() {
            return Err(SculptError::dimension(
                "set_masks",
                mask_b.shape(),
                mask_a.shape(),
            ));
        }
        for m in [&mask_b, &mask_a] {
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(SculptError::parameter(
                    "mask",
                    "entries must be exactly 0 or 1".to_string(),
                ));
            }
        }
        self.retained_b = Some(mask_b.data().iter().sum::<f64>() / mask_b.numel() as f64);
        self.retained_a = Some(mask_a.data().iter().sum::<f64>() / mask_a.numel() as f64);
        self.mask_b = Some(mask_b);
        self.mask_a = Some(mask_a);
        Ok(())
    }

    /// Zeroes the masked-out entries of both factors in place. Idempotent.
    pub fn apply_masks(&mut self) -> Result<()> {
        let (mask_b, mask_a) = match (&self.mask_b, &self.mask_a) {
            (Some(b), Some(a)) => (b, a),
            _ => {
                return Err(SculptError::State(
                    "apply_masks called on an adapter without masks".to_string(),
                ))
            }
        };
        self.b = mask_b.hadamard(&self.b)?;
        self.a = mask_a.hadamard(&self.a)?;
        Ok(())
    }

    /// Unscaled product of the (masked, when masks exist) factors.
    pub fn delta_weight_unscaled(&self) -> Matrix {
        match (&self.mask_b, &self.mask_a) {
            (Some(mb), Some(ma)) => {
                let bt = mb.hadamard(&self.b).expect("mask shape");
                let at = ma.hadamard(&self.a).expect("mask shape");
                bt.matmul(&at).expect("factor shapes")
            }
            _ => self.b.matmul(&self.a).expect("factor shapes"),
        }
    }

    /// `gamma * B~ A~` when masks exist, else `gamma * B A`.
    pub fn delta_weight(&self) -> Matrix {
        if self.scaling == 1.0 {
            self.delta_weight_unscaled()
        } else {
            self.delta_weight_unscaled().scale(self.scaling)
        }
    }

    /// `W0 + delta_weight`; `w0` is left untouched.
    pub fn merge(&self, w0: &Matrix) -> Result<Matrix> {
        if w0.shape() != self.shape() {
            return Err(SculptError::dimension("merge", w0.shape(), self.shape()));
        }
        w0.add(&self.delta_weight())
    }

    /// Fraction of product positions reachable through at least one retained
    /// rank index of both masks. Structural: independent of the numeric
    /// factor values.
    pub fn structural_sparsity(&self) -> Result<f64> {
        let (mask_b, mask_a) = match (&self.mask_b, &self.mask_a) {
            (Some(b), Some(a)) => (b, a),
            _ => {
                return Err(SculptError::State(
                    "structural_sparsity requires masks".to_string(),
                ))
            }
        };
        product_pattern_sparsity(
            &BinaryPattern::from_mask(mask_b),
            &BinaryPattern::from_mask(mask_a),
        )
    }
}
