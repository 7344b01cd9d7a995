use mtdl_core::metrics::{self, StdMode, TaskEval};
use mtdl_core::{max_pool, soft_threshold, sparse_mul, FeatureMatrix, PatchGrouping, PoolMode,
    SparseCode};
use mtdl_testkit as reference;
use proptest::prelude::*;

fn finite_value() -> impl Strategy<Value = f64> {
    prop_oneof![(-1e6f64..1e6), (-1.0f64..1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_threshold_never_grows_magnitude(x in finite_value(), phi in 0.0f64..1e3) {
        let s = soft_threshold(x, phi);
        prop_assert!(s.abs() <= x.abs());
    }

    #[test]
    fn soft_threshold_at_zero_is_identity(x in finite_value()) {
        prop_assert_eq!(soft_threshold(x, 0.0), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_mul_equals_dense_product(
        p in 1usize..=50,
        l in 1usize..=50,
        seed in 0u64..1000,
    ) {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let values: Vec<f64> = (0..p * l).map(|_| next()).collect();
        let a = FeatureMatrix::from_vec(p, l, values).unwrap();
        let dense_b: Vec<f64> = (0..l)
            .map(|_| if next() > 0.3 { 0.0 } else { next() })
            .collect();
        let b = SparseCode::from_dense(&dense_b).unwrap();
        let fast = sparse_mul(&a, &b).unwrap();
        let dense = reference::matvec(a.values(), p, l, &dense_b);
        for (x, y) in fast.iter().zip(&dense) {
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn sparse_code_round_trip_is_identity(dense in prop::collection::vec(
        prop_oneof![Just(0.0f64), -10.0f64..10.0], 1..100)) {
        let code = SparseCode::from_dense(&dense).unwrap();
        prop_assert_eq!(code.to_dense(), dense);
        prop_assert!(code.values().iter().all(|&v| v != 0.0));
        prop_assert!(code.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pooled_magnitude_is_the_max_magnitude(
        seed in 0u64..500,
        patches in 1usize..6,
        dim in 1usize..8,
    ) {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(7);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let dense: Vec<Vec<f64>> = (0..patches)
            .map(|_| (0..dim).map(|_| { let v = next(); if v.abs() < 0.3 { 0.0 } else { v } }).collect())
            .collect();
        let codes: Vec<SparseCode> =
            dense.iter().map(|v| SparseCode::from_dense(v).unwrap()).collect();
        let grouping = PatchGrouping::new(vec!["s".to_string(); patches]).unwrap();
        let pooled = max_pool(&codes, &grouping, PoolMode::AbsMax).unwrap();
        for j in 0..dim {
            let max_mag = dense.iter().map(|v| v[j].abs()).fold(0.0f64, f64::max);
            prop_assert_eq!(pooled.features[0][j].abs(), max_mag);
        }

        // Reversing the patch order never changes pooled magnitudes.
        let mut reversed = codes.clone();
        reversed.reverse();
        let pooled_rev = max_pool(&reversed, &grouping, PoolMode::AbsMax).unwrap();
        for j in 0..dim {
            prop_assert_eq!(pooled.features[0][j].abs(), pooled_rev.features[0][j].abs());
        }
    }

    #[test]
    fn nmse_is_homogeneous_of_degree_one(
        scale in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        seed in 0u64..500,
    ) {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(13);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let truth: Vec<f64> = (0..12).map(|_| next()).collect();
        prop_assume!(truth.iter().any(|&v| v != truth[0]));
        let pred: Vec<f64> = (0..12).map(|_| next()).collect();
        let base = metrics::nmse(
            &[TaskEval::new(truth.clone(), pred.clone()).unwrap()],
            StdMode::Population,
        ).unwrap();
        let scaled = metrics::nmse(
            &[TaskEval::new(
                truth.iter().map(|v| v * scale).collect(),
                pred.iter().map(|v| v * scale).collect(),
            ).unwrap()],
            StdMode::Population,
        ).unwrap();
        prop_assert!((scaled - scale.abs() * base).abs() <= 1e-10 * (1.0 + scaled.abs()));
    }

    #[test]
    fn weighted_corr_is_affine_invariant(
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
        seed in 0u64..500,
    ) {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(29);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let truth: Vec<f64> = (0..10).map(|_| next()).collect();
        let pred: Vec<f64> = (0..10).map(|_| next()).collect();
        prop_assume!(truth.iter().any(|&v| (v - truth[0]).abs() > 1e-9));
        prop_assume!(pred.iter().any(|&v| (v - pred[0]).abs() > 1e-9));
        let base = metrics::weighted_corr(
            &[TaskEval::new(truth.clone(), pred.clone()).unwrap()],
        ).unwrap();
        let transformed = metrics::weighted_corr(
            &[TaskEval::new(truth, pred.iter().map(|v| a * v + b).collect()).unwrap()],
        ).unwrap();
        prop_assert!((base - transformed).abs() <= 1e-12);
    }

    #[test]
    fn rmse_is_symmetric(
        pair in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..30)
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let ab = metrics::rmse(&a, &b).unwrap();
        let ba = metrics::rmse(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
    }
}
