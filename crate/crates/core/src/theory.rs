//! Closed-form product-sparsity laws and their Monte Carlo validation.
//!
//! For factors `B: p x r` with retained density `s_B` and `A: r x q` with
//! `s_A`, independently placed nonzeros give
//!
//! ```text
//! E[s_BA]   = 1 - (1 - s_B s_A)^r
//! P(|s_C - E[s_C]| >= delta) <= 2 exp(-2 delta^2 p q / (r (p + q)))
//! ```
//!
//! (the bound follows from McDiarmid over the factor entries: flipping one
//! entry of `B` moves the nonzero count by at most `q`, one entry of `A` by
//! at most `p`). When rows of `B` / columns of `A` are internally uniform but
//! vary in density with averages `s_B`, `s_A`, Jensen's inequality turns the
//! equality into an upper bound, so heterogeneous placement can only *lower*
//! the expected product density.
//!
//! The validator samples factor occupancy patterns, measures the structural
//! product density, and compares against these laws. Both the independent
//! (`Bernoulli`) placement the proofs assume and the exact-count
//! (`ExactTopK`) placement actual magnitude pruning produces are supported,
//! so the gap between proof model and practice is measurable.

use crate::error::{Result, SculptError};
use crate::pattern::{product_pattern_sparsity, BinaryPattern};
use crate::rng::RandomStream;

/// How nonzero positions are placed when sampling factor patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Each entry is occupied independently with probability `s`.
    Bernoulli,
    /// Exactly `round(s * n)` uniformly placed occupied entries.
    ExactTopK,
}

/// Dimensions, densities and placement model for one validation setting.
#[derive(Debug, Clone)]
pub struct SparsitySpec {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s_a: f64,
    pub s_b: f64,
    pub sampling: Sampling,
    /// Per-row densities for `B` and per-column densities for `A`, drawn
    /// uniformly from a symmetric band around the stated averages.
    pub heterogeneous: bool,
    /// Half-width of the heterogeneity band; defaults to half the average
    /// density, and is always shrunk to keep the band inside `[0, 1]` so the
    /// average stays exact.
    pub hetero_halfwidth: Option<f64>,
}

impl SparsitySpec {
    pub fn new(p: usize, q: usize, r: usize, s_a: f64, s_b: f64, sampling: Sampling) -> Result<Self> {
        if p == 0 || q == 0 || r == 0 {
            return Err(SculptError::parameter(
                "dimensions",
                format!("p, q, r must be positive, got {p}, {q}, {r}"),
            ));
        }
        for (name, s) in [("s_a", s_a), ("s_b", s_b)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(SculptError::parameter(
                    "density",
                    format!("{name} must lie in [0, 1], got {s}"),
                ));
            }
        }
        Ok(SparsitySpec {
            p,
            q,
            r,
            s_a,
            s_b,
            sampling,
            heterogeneous: false,
            hetero_halfwidth: None,
        })
    }

    pub fn heterogeneous(mut self) -> Self {
        self.heterogeneous = true;
        self
    }

    fn band_halfwidth(&self, avg: f64) -> f64 {
        let w = self.hetero_halfwidth.unwrap_or(avg / 2.0);
        w.min(avg).min(1.0 - avg).max(0.0)
    }
}

/// Monte Carlo validation outcome for one spec.
#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub expected_sparsity: f64,
    pub empirical_mean: f64,
    pub empirical_std: f64,
    pub per_trial: Vec<f64>,
    pub delta: f64,
    pub bound: f64,
    /// Trials with `|s_C - expected| >= delta`.
    pub violations: usize,
}

/// `1 - (1 - s_B s_A)^r`.
pub fn expected_product_sparsity(spec: &SparsitySpec) -> f64 {
    1.0 - (1.0 - spec.s_b * spec.s_a).powi(spec.r as i32)
}

/// Same law from raw parameters, for callers without a full spec.
pub fn expected_sparsity_raw(s_b: f64, s_a: f64, r: usize) -> f64 {
    1.0 - (1.0 - s_b * s_a).powi(r as i32)
}

/// Two-sided deviation bound `2 exp(-2 delta^2 pq / (r(p+q)))`.
///
/// Returned unclamped; values above 1 are informative only.
pub fn concentration_bound(spec: &SparsitySpec, delta: f64) -> Result<f64> {
    if delta < 0.0 {
        return Err(SculptError::parameter(
            "delta",
            format!("must be nonnegative, got {delta}"),
        ));
    }
    let (p, q, r) = (spec.p as f64, spec.q as f64, spec.r as f64);
    Ok(2.0 * (-2.0 * delta * delta * p * q / (r * (p + q))).exp())
}

fn sample_pattern(
    rng: &mut RandomStream,
    rows: usize,
    cols: usize,
    density: f64,
    sampling: Sampling,
) -> BinaryPattern {
    let mut pat = BinaryPattern::zeros(rows, cols);
    match sampling {
        Sampling::Bernoulli => {
            for i in 0..rows {
                for j in 0..cols {
                    if rng.bernoulli(density) {
                        pat.set(i, j, true);
                    }
                }
            }
        }
        Sampling::ExactTopK => {
            let n = rows * cols;
            let k = (density * n as f64).round() as usize;
            for idx in rng.choose_indices(n, k) {
                pat.set(idx / cols, idx % cols, true);
            }
        }
    }
    pat
}

/// Samples rows (for `B`) or columns (for `A`) at per-group densities.
fn sample_hetero_pattern(
    rng: &mut RandomStream,
    rows: usize,
    cols: usize,
    avg: f64,
    halfwidth: f64,
    sampling: Sampling,
    by_rows: bool,
) -> BinaryPattern {
    let groups = if by_rows { rows } else { cols };
    let densities: Vec<f64> = (0..groups)
        .map(|_| avg + halfwidth * (2.0 * rng.next_f64() - 1.0))
        .collect();
    let mut pat = BinaryPattern::zeros(rows, cols);
    for (g, &d) in densities.iter().enumerate() {
        let group_len = if by_rows { cols } else { rows };
        match sampling {
            Sampling::Bernoulli => {
                for t in 0..group_len {
                    let (i, j) = if by_rows { (g, t) } else { (t, g) };
                    if rng.bernoulli(d) {
                        pat.set(i, j, true);
                    }
                }
            }
            Sampling::ExactTopK => {
                let k = (d * group_len as f64).round() as usize;
                for t in rng.choose_indices(group_len, k) {
                    let (i, j) = if by_rows { (g, t) } else { (t, g) };
                    pat.set(i, j, true);
                }
            }
        }
    }
    pat
}

/// One pair of factor occupancy patterns drawn per the spec.
pub fn sample_mask_pair(
    rng: &mut RandomStream,
    spec: &SparsitySpec,
) -> (BinaryPattern, BinaryPattern) {
    if spec.heterogeneous {
        let wb = spec.band_halfwidth(spec.s_b);
        let wa = spec.band_halfwidth(spec.s_a);
        let mb = sample_hetero_pattern(rng, spec.p, spec.r, spec.s_b, wb, spec.sampling, true);
        let ma = sample_hetero_pattern(rng, spec.r, spec.q, spec.s_a, wa, spec.sampling, false);
        (mb, ma)
    } else {
        let mb = sample_pattern(rng, spec.p, spec.r, spec.s_b, spec.sampling);
        let ma = sample_pattern(rng, spec.r, spec.q, spec.s_a, spec.sampling);
        (mb, ma)
    }
}

/// Runs `trials` independent draws, each on its own `(seed, trial)` stream,
/// and aggregates against the closed-form laws. Deterministic for a fixed
/// seed regardless of execution order.
pub fn monte_carlo_validate(
    seed: u64,
    spec: &SparsitySpec,
    trials: usize,
    delta: f64,
) -> Result<TheoryReport> {
    if trials == 0 {
        return Err(SculptError::parameter("trials", "must be at least 1".to_string()));
    }
    let expected = expected_product_sparsity(spec);
    let bound = concentration_bound(spec, delta)?;

    let per_trial: Vec<f64> = (0..trials)
        .map(|t| {
            let mut rng = RandomStream::new(seed, t as u64);
            let (mb, ma) = sample_mask_pair(&mut rng, spec);
            product_pattern_sparsity(&mb, &ma)
        })
        .collect::<Result<_>>()?;

    let n = trials as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let var = per_trial.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / if trials > 1 { n - 1.0 } else { 1.0 };
    let violations = per_trial
        .iter()
        .filter(|&&v| (v - expected).abs() >= delta)
        .count();

    Ok(TheoryReport {
        expected_sparsity: expected,
        empirical_mean: mean,
        empirical_std: var.sqrt(),
        per_trial,
        delta,
        bound,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: usize, q: usize, r: usize, s: f64, sampling: Sampling) -> SparsitySpec {
        SparsitySpec::new(p, q, r, s, s, sampling).unwrap()
    }

    #[test]
    fn expected_sparsity_closed_form() {
        let z = spec(8, 8, 4, 0.0, Sampling::Bernoulli);
        assert_eq!(expected_product_sparsity(&z), 0.0);

        let full = spec(8, 8, 4, 1.0, Sampling::Bernoulli);
        assert_eq!(expected_product_sparsity(&full), 1.0);

        // 1 - 0.99^16, evaluated independently at high precision.
        let s = spec(256, 256, 16, 0.1, Sampling::Bernoulli);
        assert!((expected_product_sparsity(&s) - 0.14854222890512447).abs() < 1e-15);
    }

    #[test]
    fn concentration_bound_values() {
        let s = spec(2048, 2048, 8, 0.1, Sampling::Bernoulli);
        assert_eq!(concentration_bound(&s, 0.0).unwrap(), 2.0);

        // 2 exp(-2 * 0.12^2 * 2048^2 / (8 * 4096)) = 2 exp(-3.6864)
        let b = concentration_bound(&s, 0.12).unwrap();
        assert!((b - 0.050124126525117524).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for d in [0.01, 0.05, 0.1, 0.5, 1.0] {
            let v = concentration_bound(&s, d).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-100);

        assert!(concentration_bound(&s, -1.0).is_err());
    }

    #[test]
    fn full_density_patterns() {
        let s = spec(16, 16, 4, 1.0, Sampling::Bernoulli);
        let mut rng = RandomStream::new(0, 0);
        let (mb, ma) = sample_mask_pair(&mut rng, &s);
        assert_eq!(mb.density(), 1.0);
        assert_eq!(ma.density(), 1.0);
    }

    #[test]
    fn bernoulli_density_concentrates() {
        // 10^6 bits at s = 0.1 -> empirical density within 0.002.
        let s = spec(1000, 8, 1000, 0.1, Sampling::Bernoulli);
        let mut rng = RandomStream::new(7, 0);
        let (mb, _) = sample_mask_pair(&mut rng, &s);
        assert!((mb.density() - 0.1).abs() < 0.002, "density {}", mb.density());
    }

    #[test]
    fn exact_topk_is_exact() {
        let s = spec(100, 8, 10, 0.1, Sampling::ExactTopK);
        let mut rng = RandomStream::new(3, 0);
        let (mb, _) = sample_mask_pair(&mut rng, &s);
        assert_eq!(mb.count_ones(), 100); // round(0.1 * 1000)
    }

    #[test]
    fn monte_carlo_at_full_density() {
        let s = spec(32, 32, 4, 1.0, Sampling::Bernoulli);
        let report = monte_carlo_validate(1, &s, 20, 0.0).unwrap();
        assert!(report.per_trial.iter().all(|&v| v == 1.0));
        // delta = 0 makes every trial a "violation"; the bound (2.0) still
        // dominates the violation rate.
        assert_eq!(report.violations, 20);
        assert_eq!(report.bound, 2.0);
    }

    #[test]
    fn monte_carlo_mean_matches_law() {
        let s = spec(256, 256, 16, 0.1, Sampling::Bernoulli);
        let report = monte_carlo_validate(42, &s, 200, 0.05).unwrap();
        assert!(
            (report.empirical_mean - 0.14854222890512447).abs() < 0.01,
            "mean {}",
            report.empirical_mean
        );
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn monte_carlo_deterministic_per_seed() {
        let s = spec(64, 64, 8, 0.2, Sampling::ExactTopK);
        let a = monte_carlo_validate(5, &s, 30, 0.1).unwrap();
        let b = monte_carlo_validate(5, &s, 30, 0.1).unwrap();
        assert_eq!(a.per_trial, b.per_trial);
        let c = monte_carlo_validate(6, &s, 30, 0.1).unwrap();
        assert_ne!(a.per_trial, c.per_trial);
    }

    #[test]
    fn heterogeneous_mean_below_homogeneous_law() {
        // Jensen direction: varying densities with the same average cannot
        // raise the expected product density.
        let s = spec(512, 512, 8, 0.1, Sampling::Bernoulli).heterogeneous();
        let report = monte_carlo_validate(42, &s, 100, 0.12).unwrap();
        let law = expected_sparsity_raw(0.1, 0.1, 8);
        assert!(
            report.empirical_mean <= law + 0.01,
            "mean {} vs law {law}",
            report.empirical_mean
        );
    }

    #[test]
    fn hetero_band_stays_in_unit_interval() {
        let mut s = spec(64, 64, 8, 0.05, Sampling::Bernoulli).heterogeneous();
        s.hetero_halfwidth = Some(0.5); // wider than the average; must shrink
        let mut rng = RandomStream::new(11, 0);
        let (mb, ma) = sample_mask_pair(&mut rng, &s);
        assert!(mb.density() < 0.2 && ma.density() < 0.2);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(SparsitySpec::new(0, 4, 2, 0.5, 0.5, Sampling::Bernoulli).is_err());
        assert!(SparsitySpec::new(4, 4, 2, 1.5, 0.5, Sampling::Bernoulli).is_err());
        assert!(monte_carlo_validate(0, &spec(4, 4, 2, 0.5, Sampling::Bernoulli), 0, 0.1).is_err());
    }
}
