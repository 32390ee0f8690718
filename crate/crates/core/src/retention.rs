//! Magnitude-guided retention masks over pretrained weights.
//!
//! Importance of a pretrained entry is its log-compressed normalized
//! magnitude,
//!
//! ```text
//! S_ij = | 1 / ln(|W~_ij| + eps) |      with W~ = W / ||W||_F,
//! ```
//!
//! rescaled to `(0, 1)` by `M_ij = tanh(omega * S_ij)`. Larger pretrained
//! magnitudes map to larger retention strengths, so penalizing `M . dW`
//! steers updates away from the positions that matter most to the base model.
//!
//! The log argument is clamped to `1 - 1e-6` and scores are capped at `1e6`:
//! a normalized magnitude can only approach 1 for near-single-entry matrices,
//! where `ln` would otherwise blow up through its zero at 1.

use crate::error::{Result, SculptError};
use crate::matrix::Matrix;

/// Upper clamp for the log argument, keeping it strictly below 1.
const LOG_ARG_MAX: f64 = 1.0 - 1e-6;
/// Cap applied to importance scores.
const SCORE_CAP: f64 = 1e6;
/// Largest double below 1. tanh(x) rounds to exactly 1.0 for x >= ~19, so
/// saturated entries are pulled back to keep the strict m < 1 range.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Per-entry protection strengths derived from pretrained weights.
#[derive(Debug, Clone)]
pub struct RetentionMask {
    m: Matrix,
    omega: f64,
    epsilon: f64,
    norm_used: &'static str,
}

impl RetentionMask {
    /// Entries of `M`, each in `[0, 1)`.
    pub fn entries(&self) -> &Matrix {
        &self.m
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Which norm produced the weight normalization (currently always
    /// `"frobenius"`).
    pub fn norm_used(&self) -> &'static str {
        self.norm_used
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    /// Wraps explicit entries as a retention mask. Intended for synthetic
    /// masks in tests and experiments; entries must lie in `[0, 1]`.
    pub fn from_entries(m: Matrix, omega: f64, epsilon: f64) -> Result<Self> {
        if m.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(SculptError::parameter(
                "m",
                "retention entries must lie in [0, 1]".to_string(),
            ));
        }
        Ok(RetentionMask {
            m,
            omega,
            epsilon,
            norm_used: "explicit",
        })
    }
}

/// Log-compressed importance scores of `w`'s entries.
pub fn importance_scores(w: &Matrix, epsilon: f64) -> Result<Matrix> {
    if epsilon <= 0.0 {
        return Err(SculptError::parameter(
            "epsilon",
            format!("must be positive, got {epsilon}"),
        ));
    }
    let norm = w.frobenius_norm();
    if norm == 0.0 {
        return Err(SculptError::Normalization(
            "cannot normalize an all-zero weight matrix".to_string(),
        ));
    }
    Ok(w.map(|v| {
        let x = ((v / norm).abs() + epsilon).min(LOG_ARG_MAX);
        (1.0 / x.ln()).abs().min(SCORE_CAP)
    }))
}

/// Retention mask `M_ij = tanh(omega * S_ij)`.
pub fn retention_mask(w: &Matrix, omega: f64, epsilon: f64) -> Result<RetentionMask> {
    if omega <= 0.0 {
        return Err(SculptError::parameter(
            "omega",
            format!("must be positive, got {omega}"),
        ));
    }
    let scores = importance_scores(w, epsilon)?;
    Ok(RetentionMask {
        m: scores.map(|s| (omega * s).tanh().min(ONE_MINUS_ULP)),
        omega,
        epsilon,
        norm_used: "frobenius",
    })
}
