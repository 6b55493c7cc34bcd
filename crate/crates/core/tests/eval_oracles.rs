mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use ssr2gcd_core::eval::*;

#[test]
fn hungarian_equals_exhaustive_search() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let n = r.random_range(1..40);
        let kp = r.random_range(1..7);
        let kt = r.random_range(1..7);
        let pred = random_labels(&mut r, n, kp);
        let truth = random_labels(&mut r, n, kt);
        let res = hungarian_acc(&pred, &truth, &[0, 1]).unwrap();
        let best = brute_force_agreement(&pred, &truth);
        assert_eq!(res.acc_all, best as f64 / n as f64, "seed {seed}");
    }
}

#[test]
fn matching_is_injective_and_consistent() {
    for seed in 0..50 {
        let mut r = rng(500 + seed);
        let n = 60;
        let pred = random_labels(&mut r, n, 5);
        let truth = random_labels(&mut r, n, 4);
        let old = [0usize, 2];
        let res = hungarian_acc(&pred, &truth, &old).unwrap();
        let mut targets: Vec<usize> = res.matching.iter().map(|m| m.1).collect();
        targets.sort_unstable();
        targets.dedup();
        assert_eq!(targets.len(), res.matching.len());
        let map = |p: usize| res.matching.iter().find(|m| m.0 == p).map(|m| m.1);
        let hit = |i: usize| map(pred[i]) == Some(truth[i]);
        let old_idx: Vec<usize> = (0..n).filter(|&i| old.contains(&truth[i])).collect();
        let new_idx: Vec<usize> = (0..n).filter(|&i| !old.contains(&truth[i])).collect();
        let acc = |idx: &[usize]| idx.iter().filter(|&&i| hit(i)).count() as f64 / idx.len() as f64;
        assert_eq!(res.acc_old, acc(&old_idx));
        assert_eq!(res.acc_new, acc(&new_idx));
    }
}

#[test]
fn permuted_ids_score_perfectly() {
    let truth = [0, 0, 1, 2, 2, 3];
    let pred: Vec<usize> = truth.iter().map(|&t| [7, 3, 9, 1][t]).collect();
    let res = hungarian_acc(&pred, &truth, &[0, 1]).unwrap();
    assert_eq!((res.acc_all, res.acc_old, res.acc_new), (1.0, 1.0, 1.0));
    assert!((res.nmi - 1.0).abs() < 1e-12);
    assert!((res.ari - 1.0).abs() < 1e-12);
}

#[test]
fn independent_partitions_have_near_zero_ari() {
    let mut r = rng(42);
    let a = random_labels(&mut r, 2000, 5);
    let b = random_labels(&mut r, 2000, 5);
    assert!(ari(&a, &b).unwrap().abs() < 0.05);
}

#[test]
fn single_cluster_against_split_has_zero_nmi() {
    assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
}

#[test]
fn group_rank_examples() {
    // Old classes collinear, new classes spanning three dimensions.
    let mut rows = vec![];
    let mut labels = vec![];
    for c in 0..2 {
        for s in 1..4 {
            let mut v = vec![0.0; 6];
            v[c] = s as f64;
            rows.push(v);
            labels.push(c);
        }
    }
    for c in 2..4 {
        for a in 0..3 {
            let mut v = vec![0.0; 6];
            v[a + 3] = 1.0;
            rows.push(v);
            labels.push(c);
        }
    }
    let flat: Vec<f64> = rows.concat();
    let z = DMatrix::from_row_slice(rows.len(), 6, &flat);
    let rep = mean_group_ranks(&z, &labels, &[0, 1]).unwrap();
    assert_eq!(rep.mean_rank_old, Some(1.0));
    assert_eq!(rep.mean_rank_new, Some(3.0));
    assert_eq!(rep.per_class_rank, vec![1, 1, 3, 3]);
    let all_collinear = DMatrix::from_element(4, 3, 1.0);
    let rep = mean_group_ranks(&all_collinear, &[0, 0, 1, 1], &[0]).unwrap();
    assert_eq!((rep.mean_rank_old, rep.mean_rank_new), (Some(1.0), Some(1.0)));
}

#[test]
fn equal_spectra_rank_is_full() {
    for r in 1..20 {
        let m = DMatrix::from_diagonal(&DVector::from_element(r, 2.5));
        assert_eq!(numerical_rank(&m), r, "rank {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accuracy_ignores_relabeling(seed in 0u64..10_000, n in 1usize..50) {
        let mut r = rng(seed);
        let pred = random_labels(&mut r, n, 5);
        let truth = random_labels(&mut r, n, 5);
        let mut perm: Vec<usize> = (10..15).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = hungarian_acc(&pred, &truth, &[0]).unwrap();
        let b = hungarian_acc(&relabeled, &truth, &[0]).unwrap();
        prop_assert_eq!(a.acc_all, b.acc_all);
        prop_assert!((a.nmi - b.nmi).abs() < 1e-12);
        prop_assert!((a.ari - b.ari).abs() < 1e-12);
    }

    #[test]
    fn nmi_and_ari_are_symmetric(seed in 0u64..10_000, n in 2usize..60) {
        let mut r = rng(seed);
        let a = random_labels(&mut r, n, 4);
        let b = random_labels(&mut r, n, 3);
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&a, &b).unwrap() - ari(&b, &a).unwrap()).abs() < 1e-12);
        let v = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let w = ari(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&w));
    }

    #[test]
    fn rho_ignores_rotation(seed in 0u64..10_000, n in 2usize..30) {
        let mut r = rng(seed);
        let z = random_unit(&mut r, n, 4);
        let labels = random_labels(&mut r, n, 3);
        let q = random_orthogonal(&mut r, 4);
        let a = consistency_rho(&z, &labels).unwrap();
        let b = consistency_rho(&(&z * q), &labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
    }

    #[test]
    fn numerical_rank_bounded_by_matrix_rank(seed in 0u64..10_000, n in 1usize..12, d in 1usize..8, r in 1usize..6) {
        let mut g = rng(seed);
        let r = r.min(n).min(d);
        let m = gaussian(&mut g, n, r) * gaussian(&mut g, r, d);
        let nr = numerical_rank(&m);
        prop_assert!(nr <= m.rank(1e-9));
        prop_assert!(effective_rank(&m) <= r as f64 + 1e-9);
    }
}
