mod common;

use hdpmf::data::{kfold_splits, split_leave_n_out, subsample_per_user};
use hdpmf::eval::{mae, mse, paired_t_test};
use hdpmf::model::{learning_rate, norm, project_unit_ball};
use hdpmf::privacy::{rescale_prediction, stretch, WeightAssignment};
use proptest::prelude::*;

fn sorted(d: &hdpmf::RatingDataset) -> Vec<(usize, usize, u64)> {
    let mut v: Vec<_> = d
        .entries()
        .iter()
        .map(|r| (r.user, r.item, r.value.to_bits()))
        .collect();
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_lands_in_ball(u in prop::collection::vec(-10.0f64..10.0, 1..8)) {
        let p = project_unit_ball(&u);
        prop_assert!(norm(&p) <= 1.0 + 1e-12);
        prop_assert_eq!(project_unit_ball(&p), p.clone());
        if norm(&u) <= 1.0 {
            prop_assert_eq!(p, u);
        }
    }

    #[test]
    fn weight_matrix_has_rank_one(
        beta in prop::collection::vec(0.05f64..=1.0, 2..6),
        gamma in prop::collection::vec(0.05f64..=1.0, 2..6),
    ) {
        let w = WeightAssignment::new(beta.clone(), gamma.clone()).unwrap();
        for i in 1..beta.len() {
            for j in 1..gamma.len() {
                let lhs = w.weight(0, 0) * w.weight(i, j);
                let rhs = w.weight(0, j) * w.weight(i, 0);
                prop_assert!((lhs - rhs).abs() < 1e-14);
                prop_assert!(w.weight(i, j) > 0.0 && w.weight(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn rescaling_undoes_stretching(r in 1.0f64..=5.0, w in 0.01f64..=1.0) {
        let back = rescale_prediction(stretch(r, w), w, 1.0, 5.0, true).unwrap();
        prop_assert!((back - r).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_order(
        pairs in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..40),
        rot in 0usize..40,
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut rotated = pairs.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        let (p2, t2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
        prop_assert!((mse(&p, &t).unwrap() - mse(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!((mae(&p, &t).unwrap() - mae(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!(mse(&p, &t).unwrap() >= mae(&p, &t).unwrap().powi(2) - 1e-12);
    }

    #[test]
    fn t_statistic_is_antisymmetric(
        a in prop::collection::vec(0.5f64..3.0, 5),
        b in prop::collection::vec(0.5f64..3.0, 5),
    ) {
        let ab = paired_t_test(&a, &b).unwrap().t;
        let ba = paired_t_test(&b, &a).unwrap().t;
        prop_assert!((ab + ba).abs() < 1e-9 * ab.abs().max(1.0));
    }

    #[test]
    fn learning_rate_is_non_increasing(epochs in 1usize..300, eta in 1e-4f64..1.0) {
        let rates: Vec<f64> = (0..epochs).map(|t| learning_rate(t, epochs, eta)).collect();
        prop_assert!(rates.windows(2).all(|w| w[1] <= w[0]));
        let mut distinct = rates.clone();
        distinct.dedup();
        prop_assert!(distinct.len() <= 3);
    }

    #[test]
    fn splits_partition_the_data(seed in 0u64..1000, n_test in 1usize..4, folds in 2usize..5) {
        let d = common::synthetic(12, 9, 0.5, seed);
        let plan = split_leave_n_out(&d, n_test, seed);
        let mut joined: Vec<_> = sorted(&plan.train);
        joined.extend(sorted(&plan.test));
        joined.sort_unstable();
        prop_assert_eq!(&joined, &sorted(&d));
        for (u, items) in d.items_by_user().iter().enumerate() {
            let in_test = plan.test.entries().iter().filter(|r| r.user == u).count();
            let expected = if items.len() > n_test { n_test } else { 0 };
            prop_assert_eq!(in_test, expected);
        }
        let all_folds = kfold_splits(&d, folds, seed).unwrap();
        let mut tests: Vec<_> = all_folds.iter().flat_map(|p| sorted(&p.test)).collect();
        tests.sort_unstable();
        prop_assert_eq!(&tests, &sorted(&d));
        for p in &all_folds {
            prop_assert_eq!(p.train.len() + p.test.len(), d.len());
        }
    }

    #[test]
    fn subsampling_keeps_a_ceiling_fraction(seed in 0u64..1000, fraction in 0.05f64..=1.0) {
        let d = common::synthetic(10, 10, 0.6, seed);
        let s = subsample_per_user(&d, fraction, seed).unwrap();
        for (u, items) in d.items_by_user().iter().enumerate() {
            let kept = s.entries().iter().filter(|r| r.user == u).count();
            prop_assert_eq!(kept, ((fraction * items.len() as f64) - 1e-9).ceil() as usize);
        }
        prop_assert!(s.entries().iter().all(|r| d.entries().contains(r)));
    }
}
