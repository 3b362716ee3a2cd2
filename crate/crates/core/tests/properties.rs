use enet_cp::io::{read_factors, read_tensor, write_factors, write_tensor};
use enet_cp::path::{count_true_zeros, extract_pattern, SparsityPattern};
use enet_cp::solvers::soft_threshold;
use enet_cp::{
    bcd_solve, column_update, cp_reconstruct, mode_fold, mode_unfold, normalize_factors, sparse_constrained_solve,
    DenseTensor, ElasticNetConfig, FactorSet, MaskedTensor,
};
use nalgebra::DMatrix;
use proptest::collection::vec;
use proptest::prelude::*;

fn shape_strategy(max_modes: usize) -> impl Strategy<Value = Vec<usize>> {
    vec(1usize..=4, 2..=max_modes)
}

fn tensor_strategy() -> impl Strategy<Value = DenseTensor> {
    shape_strategy(4).prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        vec(-10.0f64..10.0, len).prop_map(move |data| DenseTensor::new(shape.clone(), data).unwrap())
    })
}

/// Factors with roughly a third of their entries exactly zero.
fn factors_strategy(shape: Vec<usize>, rank: usize) -> impl Strategy<Value = FactorSet> {
    let mats: Vec<_> = shape
        .iter()
        .map(|&d| {
            vec(prop_oneof![1 => Just(0.0), 2 => -3.0f64..3.0], d * rank)
                .prop_map(move |v| DMatrix::from_vec(d, rank, v))
        })
        .collect();
    mats.prop_map(|m| FactorSet::new(m).unwrap())
}

fn shape_and_factors() -> impl Strategy<Value = FactorSet> {
    (shape_strategy(4), 0usize..=4).prop_flat_map(|(s, r)| factors_strategy(s, r))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(t in tensor_strategy(), n in 0usize..4) {
        let n = n % t.ndim();
        let m = mode_unfold(&t, n).unwrap();
        prop_assert_eq!(m.nrows(), t.shape()[n]);
        let back = mode_fold(&m, t.shape(), n).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn reconstruction_is_additive_over_components(f in shape_and_factors(), split in 0usize..=4) {
        let split = split.min(f.rank());
        let left: Vec<usize> = (0..split).collect();
        let right: Vec<usize> = (split..f.rank()).collect();
        let whole = cp_reconstruct(&f);
        let a = cp_reconstruct(&f.select_columns(&left));
        let b = cp_reconstruct(&f.select_columns(&right));
        let sum: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        prop_assert!(close(whole.data(), &sum, 1e-12));
    }

    #[test]
    fn normalized_components_rebuild_the_tensor(f in shape_and_factors()) {
        let nd = normalize_factors(&f);
        prop_assert!(nd.gammas.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(close(cp_reconstruct(&nd.to_factor_set()).data(), cp_reconstruct(&f).data(), 1e-10));
    }

    #[test]
    fn soft_threshold_shrinks_towards_zero(u in -100.0f64..100.0, k in 0.0f64..50.0) {
        let s = soft_threshold(u, k);
        prop_assert!(s.abs() <= u.abs());
        prop_assert!(s == 0.0 || s.signum() == u.signum());
        prop_assert!((u - s).abs() <= k + 1e-12);
    }

    /// Each row of the column update satisfies the subgradient optimality
    /// conditions of its one-dimensional elastic-net problem.
    #[test]
    fn column_update_meets_optimality_conditions(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in vec(-2.0f64..2.0, 200),
        mask in vec(any::<bool>(), 48),
        lambda in 0.0f64..3.0,
        alpha in 0.0f64..=1.0,
    ) {
        let w = DMatrix::from_fn(rows, cols, |i, j| seed[i * cols + j]);
        let d = DMatrix::from_fn(rows, cols, |i, j| if mask[i * cols + j] { 1.0 } else { 0.0 });
        let h: Vec<f64> = (0..cols).map(|j| seed[100 + j]).collect();
        let t: Vec<f64> = (0..rows).map(|i| 0.5 + seed[150 + i].abs()).collect();
        let up = column_update(&w, &d, &h, &t, lambda, alpha).unwrap();
        for i in 0..rows {
            let (mut u, mut hsq) = (0.0, 0.0);
            for j in 0..cols {
                u += d[(i, j)] * h[j] * w[(i, j)];
                hsq += d[(i, j)] * h[j] * h[j];
            }
            let x = up.x[i];
            let smooth = (hsq + lambda * (1.0 - alpha) * t[i]) * x - u;
            let l1 = lambda * alpha;
            if up.undetermined.contains(&i) {
                prop_assert_eq!(x, 0.0);
            } else if x == 0.0 {
                prop_assert!(u.abs() <= l1 + 1e-9, "row {}: |u| = {} > {}", i, u.abs(), l1);
            } else {
                prop_assert!((smooth + l1 * x.signum()).abs() <= 1e-9 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn pattern_extraction_is_idempotent(f in shape_and_factors()) {
        let eps = 1e-9;
        let first = extract_pattern(&f, eps);
        prop_assert_eq!(first.truncated.rank(), first.rank);
        prop_assert_eq!(first.pattern.zeros(), first.nzs);
        prop_assert_eq!(first.truncated.count_zeros(), first.nzs);
        let second = extract_pattern(&first.truncated, eps);
        prop_assert_eq!(second.rank, first.rank);
        prop_assert_eq!(second.nzs, first.nzs);
        prop_assert_eq!(&second.pattern, &first.pattern);
        prop_assert_eq!(&second.truncated, &first.truncated);
    }

    #[test]
    fn true_zero_counts_are_bounded(f in shape_and_factors(), g_seed in any::<u64>()) {
        let eps = 1e-9;
        let ex = extract_pattern(&f, eps);
        // Compare against a truth that is a column subset of the same factors.
        let keep: Vec<usize> = (0..f.rank()).filter(|r| (g_seed >> r) & 1 == 1).collect();
        let truth = f.select_columns(&keep);
        let (nzs, nzt) = count_true_zeros(&ex.pattern, &truth, eps);
        prop_assert_eq!(nzs, ex.nzs);
        prop_assert!(nzt <= nzs);
    }

    #[test]
    fn tensor_files_round_trip_bit_exactly(
        t in tensor_strategy(),
        bits in vec(any::<u64>(), 256),
        mask in vec(any::<bool>(), 256),
    ) {
        let data: Vec<f64> = (0..t.len()).map(|k| f64::from_bits(bits[k])).map(|v| if v.is_nan() { 0.5 } else { v }).collect();
        let values = DenseTensor::new(t.shape().to_vec(), data).unwrap();
        let z = MaskedTensor::new(values, mask[..t.len()].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        write_tensor(&path, &z).unwrap();
        let back = read_tensor(&path).unwrap();
        prop_assert_eq!(back.mask(), z.mask());
        let same = back.values().data().iter().zip(z.values().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn factor_files_round_trip(f in shape_and_factors()) {
        let dir = tempfile::tempdir().unwrap();
        write_factors(dir.path(), &f).unwrap();
        prop_assert_eq!(read_factors(dir.path()).unwrap(), f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Objective never rises across outer sweeps, and frozen entries stay zero.
    #[test]
    fn descent_solvers_are_monotone(
        truth in (Just(vec![4usize, 3, 5]), 1usize..=2).prop_flat_map(|(s, r)| factors_strategy(s, r)),
        init in factors_strategy(vec![4, 3, 5], 2),
        mask in vec(prop::bool::weighted(0.8), 60),
        lambda in 0.0f64..1.0,
        alpha in 0.0f64..=1.0,
    ) {
        let z = MaskedTensor::new(cp_reconstruct(&truth), mask).unwrap();
        let cfg = ElasticNetConfig::identity(lambda, alpha, z.shape()).unwrap().with_max_iters(25);
        let (_, rep) = bcd_solve(&z, &init, &cfg).unwrap();
        for w in rep.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }

        let pattern = SparsityPattern::from_factors(&init, 1e-9);
        let (f, rep) = sparse_constrained_solve(&z, &init, &pattern, &cfg).unwrap();
        prop_assert!(pattern.is_satisfied_by(&f));
        for w in rep.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
        }
    }
}
