//! Property-based invariants across the numeric core.

use lorasculpt::adapter::build_mask;
use lorasculpt::pattern::{product_pattern_sparsity, BinaryPattern};
use lorasculpt::retention::retention_mask;
use lorasculpt::theory::{
    concentration_bound, expected_product_sparsity, monte_carlo_validate, Sampling, SparsitySpec,
};
use lorasculpt::{LoraAdapter, Matrix, RandomStream};
use proptest::prelude::*;

fn finite_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-100.0f64..100.0, r * c)
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn mask_cardinality_is_rounded_count(m in finite_matrix(12), s in 0.0f64..=1.0) {
        let mask = build_mask(&m, s).unwrap();
        let ones = mask.data().iter().filter(|&&v| v == 1.0).count();
        let zeros = mask.data().iter().filter(|&&v| v == 0.0).count();
        prop_assert_eq!(ones + zeros, m.numel());
        prop_assert_eq!(ones, (s * m.numel() as f64).round() as usize);
    }

    #[test]
    fn mask_retained_sets_are_nested(m in finite_matrix(10), lo in 0.0f64..=1.0, hi in 0.0f64..=1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let small = build_mask(&m, lo).unwrap();
        let large = build_mask(&m, hi).unwrap();
        for (s, l) in small.data().iter().zip(large.data()) {
            prop_assert!(*s <= *l, "position retained at density {lo} but not at {hi}");
        }
    }

    #[test]
    fn hadamard_commutes_bitwise(a in finite_matrix(8)) {
        let mut rng = RandomStream::new(1, 0);
        let b = rng.sample_gaussian(a.rows(), a.cols(), 3.0);
        let ab = a.hadamard(&b).unwrap();
        let ba = b.hadamard(&a).unwrap();
        prop_assert!(ab.bit_eq(&ba));
    }

    #[test]
    fn frobenius_squared_matches_sum_of_squares(m in finite_matrix(10)) {
        let n = m.frobenius_norm();
        let sum_sq: f64 = m.data().iter().map(|v| v * v).sum();
        prop_assert!((n * n - sum_sq).abs() <= 1e-12 * sum_sq.max(1.0));
    }

    #[test]
    fn retention_scale_invariant_power_of_two(m in finite_matrix(8), k in -8i32..=8) {
        // Skip the all-zero matrix (normalization undefined).
        prop_assume!(m.data().iter().any(|&v| v != 0.0));
        let c = 2f64.powi(k);
        let scaled = m.scale(c);
        let base = retention_mask(&m, 1.0, 1e-8).unwrap();
        let other = retention_mask(&scaled, 1.0, 1e-8).unwrap();
        // Power-of-two scaling cancels exactly in the normalization.
        prop_assert!(base.entries().bit_eq(other.entries()));
    }

    #[test]
    fn retention_scale_invariant_general(m in finite_matrix(8), c in 0.001f64..1000.0) {
        prop_assume!(m.data().iter().any(|&v| v != 0.0));
        let base = retention_mask(&m, 1.0, 1e-8).unwrap();
        let other = retention_mask(&m.scale(c), 1.0, 1e-8).unwrap();
        for (x, y) in base.entries().data().iter().zip(other.entries().data()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn retention_monotone_in_magnitude(m in finite_matrix(8)) {
        prop_assume!(m.data().iter().any(|&v| v != 0.0));
        let mask = retention_mask(&m, 1.0, 1e-8).unwrap();
        let mags: Vec<f64> = m.data().iter().map(|v| v.abs()).collect();
        let ret = mask.entries().data();
        for i in 0..mags.len() {
            for j in 0..mags.len() {
                if mags[i] < mags[j] {
                    prop_assert!(ret[i] <= ret[j]);
                }
            }
        }
    }

    #[test]
    fn structural_sparsity_dominates_numeric_density(
        seed in 0u64..1000,
        s_b in 0.05f64..1.0,
        s_a in 0.05f64..1.0,
    ) {
        let mut rng = RandomStream::new(seed, 0);
        let (p, r, q) = (6, 3, 7);
        let mut adapter = LoraAdapter::new(
            rng.sample_gaussian(p, r, 1.0),
            rng.sample_gaussian(r, q, 1.0),
            1.0,
        ).unwrap();
        adapter.build_masks(s_b, s_a).unwrap();
        adapter.apply_masks().unwrap();
        let structural = adapter.structural_sparsity().unwrap();
        let numeric = adapter.delta_weight().nonzero_fraction();
        prop_assert!(structural >= numeric - 1e-15,
            "structural {structural} < numeric {numeric}");
    }

    #[test]
    fn masked_factor_density_equals_retained_density(seed in 0u64..1000) {
        // Gaussian entries are almost surely nonzero, so the numeric nonzero
        // fraction of the masked factor equals the mask density exactly.
        let mut rng = RandomStream::new(seed, 1);
        let mut adapter = LoraAdapter::new(
            rng.sample_gaussian(8, 4, 1.0),
            rng.sample_gaussian(4, 10, 1.0),
            1.0,
        ).unwrap();
        adapter.build_masks(0.3, 0.5).unwrap();
        adapter.apply_masks().unwrap();
        let n_a = adapter.a().numel() as f64;
        let expected_a = (0.5 * n_a).round() / n_a;
        prop_assert_eq!(adapter.a().nonzero_fraction(), expected_a);
    }
}

#[test]
fn pattern_route_matches_positive_factor_route() {
    // The boolean product sparsity must equal the numeric nonzero fraction of
    // a delta built from the same masks with strictly positive entries.
    let mut rng = RandomStream::new(99, 0);
    for trial in 0..50 {
        let spec = SparsitySpec::new(12, 9, 4, 0.4, 0.3, Sampling::Bernoulli).unwrap();
        let mut trial_rng = RandomStream::new(99, trial);
        let (mb, ma) = lorasculpt::sample_mask_pair(&mut trial_rng, &spec);
        let pattern_density = product_pattern_sparsity(&mb, &ma).unwrap();

        let mut to_matrix = |p: &BinaryPattern| {
            let mut m = Matrix::zeros(p.rows(), p.cols());
            for i in 0..p.rows() {
                for j in 0..p.cols() {
                    if p.get(i, j) {
                        // strictly positive entries: no cancellation possible
                        m.set(i, j, 0.5 + rng.next_f64());
                    }
                }
            }
            m
        };
        let b = to_matrix(&mb);
        let a = to_matrix(&ma);
        let numeric = b.matmul(&a).unwrap().nonzero_fraction();
        assert_eq!(pattern_density, numeric, "trial {trial}");
    }
}

#[test]
fn violation_rate_stays_below_deviation_bound() {
    // In a regime where the bound is informative (< 1), the observed
    // violation rate over 150 trials must not exceed it.
    let spec = SparsitySpec::new(1024, 1024, 8, 0.1, 0.1, Sampling::Bernoulli).unwrap();
    let delta = 0.1;
    let bound = concentration_bound(&spec, delta).unwrap();
    assert!(bound < 1.0, "bound {bound} not informative");
    let report = monte_carlo_validate(7, &spec, 150, delta).unwrap();
    let rate = report.violations as f64 / 150.0;
    assert!(rate <= bound, "rate {rate} exceeds bound {bound}");
}

#[test]
fn exact_topk_mean_close_to_independent_law() {
    // Magnitude pruning fixes the nonzero count per factor; the product
    // density still tracks the independent-placement law closely.
    let spec = SparsitySpec::new(256, 256, 16, 0.1, 0.1, Sampling::ExactTopK).unwrap();
    let report = monte_carlo_validate(11, &spec, 100, 0.05).unwrap();
    let law = expected_product_sparsity(&spec);
    assert!(
        (report.empirical_mean - law).abs() < 0.01,
        "mean {} vs law {law}",
        report.empirical_mean
    );
}

#[test]
fn stream_reproducibility_long_horizon() {
    let mut a = RandomStream::new(0xFEED, 17);
    let mut b = RandomStream::new(0xFEED, 17);
    for _ in 0..10_000 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let ga: Vec<f64> = (0..10_000).map(|_| a.next_gaussian()).collect();
    let gb: Vec<f64> = (0..10_000).map(|_| b.next_gaussian()).collect();
    assert_eq!(ga, gb);
}
