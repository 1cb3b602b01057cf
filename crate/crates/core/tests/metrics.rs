mod common;

use chat_capsule::metrics::{macro_prf, ConfusionMatrix};
use common::{oracle_prf, rng};
use proptest::prelude::*;
use rand::Rng;

fn random_counts(r: &mut impl Rng, k: usize) -> Vec<u64> {
    (0..k * k)
        .map(|_| if r.gen_bool(0.2) { 0 } else { r.gen_range(0..50) })
        .collect()
}

#[test]
fn macro_scores_match_per_class_recomputation() {
    let mut r = rng(31);
    for _ in 0..1000 {
        let mut counts = random_counts(&mut r, 6);
        counts[0] += 1;
        let cm = ConfusionMatrix::from_counts(6, counts.clone()).unwrap();
        let got = macro_prf(&cm).unwrap();
        let want = oracle_prf(6, &counts);
        assert!((got.precision - want.precision).abs() <= 1e-12);
        assert!((got.recall - want.recall).abs() <= 1e-12);
        assert!((got.f1 - want.f1).abs() <= 1e-12);
        assert!((got.accuracy - want.accuracy).abs() <= 1e-12);
    }
}

#[test]
fn macro_f1_is_the_mean_of_class_f1() {
    // Class 0: P = 1, R = 1/2 -> F1 = 2/3. Class 1: P = 2/3, R = 1 -> F1 = 4/5.
    let cm = ConfusionMatrix::from_counts(2, vec![1, 1, 0, 2]).unwrap();
    let got = macro_prf(&cm).unwrap();
    assert!((got.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    // The F1 of mean precision and mean recall would differ.
    let f_of_means = 2.0 * got.precision * got.recall / (got.precision + got.recall);
    assert!((got.f1 - f_of_means).abs() > 1e-3);
}

#[test]
fn accumulation_counts() {
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(2, 1).unwrap();
    assert_eq!(cm.get(2, 1), 1);
    assert_eq!(cm.total(), 1);
    cm.accumulate(2, 1).unwrap();
    assert_eq!(cm.get(2, 1), 2);
    assert_eq!(cm.total(), 2);
}

#[test]
fn random_stream_matches_a_recount() {
    let mut r = rng(8);
    let pairs: Vec<(usize, usize)> = (0..5000).map(|_| (r.gen_range(0..5), r.gen_range(0..5))).collect();
    let mut cm = ConfusionMatrix::new(5);
    for &(g, p) in &pairs {
        cm.accumulate(g, p).unwrap();
    }
    for g in 0..5 {
        for p in 0..5 {
            let n = pairs.iter().filter(|&&x| x == (g, p)).count() as u64;
            assert_eq!(cm.get(g, p), n);
        }
    }
    assert_eq!(cm.total(), 5000);
}

#[test]
fn probabilities_are_scored_by_argmax() {
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate_probs(1, &[0.2, 0.5, 0.3]).unwrap();
    cm.accumulate_probs(0, &[0.1, 0.1, 0.8]).unwrap();
    assert_eq!(cm.get(1, 1), 1);
    assert_eq!(cm.get(0, 2), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn invariant_under_class_relabeling(seed in 0u64..100_000, k in 2usize..8) {
        let mut r = rng(seed);
        let mut counts = random_counts(&mut r, k);
        counts[0] += 1;
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let mut permuted = vec![0; k * k];
        for g in 0..k {
            for p in 0..k {
                permuted[perm[g] * k + perm[p]] = counts[g * k + p];
            }
        }
        let a = macro_prf(&ConfusionMatrix::from_counts(k, counts).unwrap()).unwrap();
        let b = macro_prf(&ConfusionMatrix::from_counts(k, permuted).unwrap()).unwrap();
        prop_assert!((a.precision - b.precision).abs() <= 1e-12);
        prop_assert!((a.recall - b.recall).abs() <= 1e-12);
        prop_assert!((a.f1 - b.f1).abs() <= 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn accuracy_lies_between_class_recalls(seed in 0u64..100_000, k in 2usize..8) {
        let mut r = rng(seed);
        let mut counts = random_counts(&mut r, k);
        // Every class occurs, so every recall is defined.
        for c in 0..k {
            counts[c * k + r.gen_range(0..k)] += 1;
        }
        let cm = ConfusionMatrix::from_counts(k, counts.clone()).unwrap();
        let acc = macro_prf(&cm).unwrap().accuracy;
        let recalls: Vec<f64> = (0..k)
            .map(|c| {
                let row: u64 = (0..k).map(|p| counts[c * k + p]).sum();
                counts[c * k + c] as f64 / row as f64
            })
            .collect();
        let lo = recalls.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = recalls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(acc >= lo - 1e-12 && acc <= hi + 1e-12);
    }

    #[test]
    fn merged_matrices_add(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let a = random_counts(&mut r, 4);
        let b = random_counts(&mut r, 4);
        let mut m = ConfusionMatrix::from_counts(4, a.clone()).unwrap();
        m.merge(&ConfusionMatrix::from_counts(4, b.clone()).unwrap()).unwrap();
        let sum: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        prop_assert_eq!(m, ConfusionMatrix::from_counts(4, sum).unwrap());
    }
}
