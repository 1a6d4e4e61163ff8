//! Property tests for the structural identities the rest of the crate
//! leans on.

use flowten::metrics::{auc, normalize_scores, LabeledScores};
use flowten::scenario::{fold_time, unfold_time};
use flowten::tensor::{
    cpd_reconstruct, khatri_rao, masked_stats, masked_stats_iter, soft_threshold, FactorTriple,
    Matrix, Mode, Tensor3,
};
use proptest::prelude::*;

fn small_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..5, 1usize..5, 1usize..4)
}

fn tensor_for(dims: (usize, usize, usize)) -> impl Strategy<Value = Tensor3> {
    proptest::collection::vec(-100.0f64..100.0, dims.0 * dims.1 * dims.2)
        .prop_map(move |data| Tensor3::new(dims, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_refold_round_trips((dims, mode_idx) in (small_dims(), 0usize..3)) {
        let t = Tensor3::from_fn(dims, |i, j, k| (i + 10 * j + 100 * k) as f64 + 0.5);
        let mode = Mode::ALL[mode_idx];
        let back = Tensor3::refold(&t.unfold(mode), mode, dims).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn cpd_khatri_rao_identity(seed in 0u64..1000) {
        let mut s = seed.wrapping_add(1);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let f = FactorTriple::new(
            Matrix::from_fn(3, 2, |_, _| next()),
            Matrix::from_fn(4, 2, |_, _| next()),
            Matrix::from_fn(2, 2, |_, _| next()),
        ).unwrap();
        let x = cpd_reconstruct(&f);
        let lhs = x.unfold(Mode::One);
        let rhs = f.p.matmul(&khatri_rao(&f.q2, &f.q1).unwrap().transpose()).unwrap();
        let rel = lhs.sub(&rhs).unwrap().frobenius_sq().sqrt()
            / lhs.frobenius_sq().sqrt().max(1e-12);
        prop_assert!(rel < 1e-12);
    }

    #[test]
    fn soft_threshold_is_non_expansive(dims in small_dims(), seed in 0u64..500) {
        let mut s = seed.wrapping_add(7);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let t = Tensor3::from_fn(dims, |_, _, _| next() * 20.0 - 10.0);
        let thresh = Tensor3::from_fn(dims, |_, _, _| next() * 5.0);
        let out = soft_threshold(&t, &thresh).unwrap();
        for (o, i) in out.data().iter().zip(t.data()) {
            prop_assert!(o.abs() <= i.abs() + 1e-15);
            // Shrinkage never flips signs.
            prop_assert!(*o == 0.0 || o.signum() == i.signum());
        }
    }

    #[test]
    fn masked_stats_all_ones_equals_unmasked(dims in small_dims()) {
        let t = Tensor3::from_fn(dims, |i, j, k| (i * 7 + j * 3 + k) as f64 - 4.0);
        let ones = Tensor3::constant(dims, 1.0);
        let (mean, var) = masked_stats(&t, &ones).unwrap();
        let n = t.len() as f64;
        let plain_mean = t.data().iter().sum::<f64>() / n;
        prop_assert!((mean - plain_mean).abs() < 1e-12);
        if t.len() > 1 {
            let plain_var = t.data().iter().map(|v| (v - plain_mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((var - plain_var).abs() < 1e-9);
        } else {
            prop_assert_eq!(var, 0.0);
        }
    }

    #[test]
    fn masked_stats_is_mask_order_invariant(values in proptest::collection::vec((-50.0f64..50.0, prop::bool::ANY), 1..40)) {
        let pairs: Vec<(f64, f64)> = values.iter().map(|&(v, m)| (v, if m { 1.0 } else { 0.0 })).collect();
        let (mean_a, var_a) = masked_stats_iter(pairs.iter().copied());
        let mut rev = pairs.clone();
        rev.reverse();
        let (mean_b, var_b) = masked_stats_iter(rev.iter().copied());
        prop_assert_eq!(mean_a.to_bits(), mean_b.to_bits());
        prop_assert_eq!(var_a.to_bits(), var_b.to_bits());
    }

    #[test]
    fn fold_time_round_trips(rows in 1usize..5, t1 in 1usize..5, t2 in 1usize..4) {
        let m = Matrix::from_fn(rows, t1 * t2, |r, c| (r * 31 + c) as f64 * 0.25);
        let folded = fold_time(&m, t1, t2).unwrap();
        prop_assert_eq!(unfold_time(&folded), m);
    }

    #[test]
    fn auc_is_rank_statistic(scores in proptest::collection::vec(-10.0f64..10.0, 4..40), flip in 0usize..3) {
        let truth: Vec<bool> = scores.iter().enumerate().map(|(i, _)| i % 3 == flip).collect();
        prop_assume!(truth.iter().any(|&b| b) && truth.iter().any(|&b| !b));
        let base = auc(&LabeledScores::new(scores.clone(), truth.clone()).unwrap()).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|v| (v * 0.1).tanh()).collect();
        let shifted = auc(&LabeledScores::new(squashed, truth).unwrap()).unwrap();
        prop_assert!((base - shifted).abs() < 1e-12);
    }

    #[test]
    fn normalized_scores_bounded(dims in small_dims(), seed in 0u64..200) {
        let mut s = seed.wrapping_add(3);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let t = Tensor3::from_fn(dims, |_, _, _| next());
        let n = normalize_scores(&t);
        for &v in n.data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if t.max_abs() > 0.0 {
            prop_assert!(n.data().iter().any(|&v| v == 1.0));
        }
    }
}
