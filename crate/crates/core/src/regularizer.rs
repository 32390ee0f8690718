//! Conflict-mitigation regularizer values and analytic gradients.
//!
//! Two variants over the retention mask `M` and the unscaled delta `P = BA`
//! (masked factors when the adapter carries masks):
//!
//! ```text
//! L_F  = || M . P ||_F        (dense weight-role layers)
//! L_1  = || M . P ||_1        (connector-role layers, soft sparsity)
//! ```
//!
//! Gradients with respect to the factors, derived by chain rule from
//! `dL_F^2/dP_ij = 2 M_ij^2 P_ij`:
//!
//! ```text
//! L_F:  G = (M . M . P) / L_F      grad_B = G A^T,  grad_A = B^T G
//! L_1:  G = M . sign(P)            grad_B = G A^T,  grad_A = B^T G
//! ```
//!
//! `L_F` is kept as a plain (not squared) norm; at `L_F <= 1e-12` the
//! subgradient 0 is returned. `sign(0) = 0` in the L1 variant.

use crate::adapter::LoraAdapter;
use crate::error::{Result, SculptError};
use crate::matrix::Matrix;
use crate::retention::RetentionMask;

/// Below this Frobenius value the norm gradient is treated as the zero
/// subgradient.
pub const NORM_FLOOR: f64 = 1e-12;

/// Per-layer regularizer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerReg {
    Frobenius,
    L1,
    None,
}

impl LayerReg {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerReg::Frobenius => "frobenius",
            LayerReg::L1 => "l1",
            LayerReg::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frobenius" => Ok(LayerReg::Frobenius),
            "l1" => Ok(LayerReg::L1),
            "none" => Ok(LayerReg::None),
            other => Err(SculptError::parameter(
                "layer_tag",
                format!("expected frobenius|l1|none, got {other}"),
            )),
        }
    }
}

/// Coefficients and per-layer assignment of the regularizer.
#[derive(Debug, Clone)]
pub struct RegularizerConfig {
    /// Coefficient on the Frobenius branch.
    pub alpha: f64,
    /// Coefficient on the L1 (connector) branch.
    pub beta: f64,
    pub layer_tags: Vec<LayerReg>,
}

impl RegularizerConfig {
    pub fn new(alpha: f64, beta: f64, layer_tags: Vec<LayerReg>) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 {
            return Err(SculptError::parameter(
                "alpha/beta",
                format!("coefficients must be nonnegative, got alpha={alpha}, beta={beta}"),
            ));
        }
        Ok(RegularizerConfig {
            alpha,
            beta,
            layer_tags,
        })
    }
}

/// Analytic gradient of a regularizer term with respect to both factors.
#[derive(Debug, Clone)]
pub struct RegGrad {
    pub grad_b: Matrix,
    pub grad_a: Matrix,
    pub loss: f64,
}

fn check_mask_shape(mask: &RetentionMask, adapter: &LoraAdapter) -> Result<()> {
    if mask.shape() != adapter.shape() {
        return Err(SculptError::dimension(
            "cmr mask",
            mask.shape(),
            adapter.shape(),
        ));
    }
    Ok(())
}

/// `|| M . BA ||_F` on the adapter's (masked) unscaled delta.
pub fn cmr_frobenius(mask: &RetentionMask, adapter: &LoraAdapter) -> Result<f64> {
    check_mask_shape(mask, adapter)?;
    let delta = adapter.delta_weight_unscaled();
    Ok(mask.entries().hadamard(&delta)?.frobenius_norm())
}

/// `|| M . BA ||_1` on the adapter's (masked) unscaled delta.
pub fn cmr_l1(mask: &RetentionMask, adapter: &LoraAdapter) -> Result<f64> {
    check_mask_shape(mask, adapter)?;
    let delta = adapter.delta_weight_unscaled();
    Ok(mask.entries().hadamard(&delta)?.l1_norm())
}

fn masked_factors(adapter: &LoraAdapter) -> (Matrix, Matrix) {
    match (adapter.mask_b(), adapter.mask_a()) {
        (Some(mb), Some(ma)) => (
            mb.hadamard(adapter.b()).expect("mask shape"),
            ma.hadamard(adapter.a()).expect("mask shape"),
        ),
        _ => (adapter.b().clone(), adapter.a().clone()),
    }
}

/// Gradient of the Frobenius variant.
pub fn cmr_frobenius_grad(mask: &RetentionMask, adapter: &LoraAdapter) -> Result<RegGrad> {
    check_mask_shape(mask, adapter)?;
    let (b, a) = masked_factors(adapter);
    let delta = b.matmul(&a)?;
    let masked = mask.entries().hadamard(&delta)?;
    let loss = masked.frobenius_norm();
    if loss <= NORM_FLOOR {
        return Ok(RegGrad {
            grad_b: Matrix::zeros(b.rows(), b.cols()),
            grad_a: Matrix::zeros(a.rows(), a.cols()),
            loss,
        });
    }
    // G = (M . M . BA) / L
    let g = mask.entries().hadamard(&masked)?.scale(1.0 / loss);
    Ok(RegGrad {
        grad_b: g.matmul(&a.transpose())?,
        grad_a: b.transpose().matmul(&g)?,
        loss,
    })
}

/// Gradient of the L1 variant.
pub fn cmr_l1_grad(mask: &RetentionMask, adapter: &LoraAdapter) -> Result<RegGrad> {
    check_mask_shape(mask, adapter)?;
    let (b, a) = masked_factors(adapter);
    let delta = b.matmul(&a)?;
    let masked = mask.entries().hadamard(&delta)?;
    let loss = masked.l1_norm();
    // G = M . sign(BA), with sign(0) = 0
    let sign = delta.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    let g = mask.entries().hadamard(&sign)?;
    Ok(RegGrad {
        grad_b: g.matmul(&a.transpose())?,
        grad_a: b.transpose().matmul(&g)?,
        loss,
    })
}

/// Composite objective: `task + alpha * sum(frob) + beta * sum(l1)`.
pub fn total_loss(
    task_loss: f64,
    frob_terms: &[f64],
    l1_terms: &[f64],
    cfg: &RegularizerConfig,
) -> f64 {
    task_loss
        + cfg.alpha * frob_terms.iter().sum::<f64>()
        + cfg.beta * l1_terms.iter().sum::<f64>()
}
