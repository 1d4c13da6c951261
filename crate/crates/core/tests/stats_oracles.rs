mod common;

use chameleon_core::rng;
use chameleon_core::stats::{aggregate, holm_correct, mean_ranks, wilcoxon_signed_rank, SeedResult};
use common::*;
use rand::Rng;

#[test]
fn exact_p_values_match_sign_flip_enumeration() {
    let mut r = rng::stream(70, &[]);
    for n in 5..=12 {
        for trial in 0..15 {
            // integer grid values produce ties and zero differences
            let a: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..n)
                .map(|i| if trial % 3 == 0 { a[i] + r.gen_range(-2.0..2.0) } else { r.gen_range(0..6) as f64 })
                .collect();
            match wilcoxon_signed_rank(&a, &b) {
                Ok(w) => assert_eq!(w.p_value, brute_force_wilcoxon(&a, &b), "n={n} a={a:?} b={b:?}"),
                Err(_) => assert!(a.iter().zip(&b).all(|(x, y)| x == y)),
            }
        }
    }
}

#[test]
fn normal_approximation_matches_reference_values() {
    // reference p-values from an independent statistics library
    // (two-sided, tie-corrected variance, no continuity correction)
    let a: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
    let b: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).cos()).collect();
    let w = wilcoxon_signed_rank(&a, &b).unwrap();
    assert!(!w.exact);
    assert!((w.p_value - 0.3793746688088797).abs() < 1e-9, "{}", w.p_value);
    // the exact distribution is still within a few percent at n = 16
    assert!((w.p_value - brute_force_wilcoxon(&a, &b)).abs() < 0.03);

    let a = [1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0, 5.0, 5.0, 6.0, 7.0, 7.0, 8.0, 9.0, 9.0, 9.0, 10.0, 11.0];
    let b = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 12.0];
    let w = wilcoxon_signed_rank(&a, &b).unwrap();
    assert!((w.p_value - 0.00026999809516534313).abs() < 1e-9, "{}", w.p_value);
}

#[test]
fn holm_hand_computed_fixtures() {
    // m = 4: thresholds 0.0125, 0.05/3, 0.025, 0.05 along sorted p
    let d = holm_correct(&[0.03, 0.001, 0.012, 0.2], 0.05);
    assert_eq!(d.iter().map(|x| x.rejected).collect::<Vec<_>>(), [false, true, true, false]);
    assert_eq!(d[1].threshold, 0.0125);
    assert_eq!(d[2].threshold, 0.05 / 3.0);
    // step-down stops at the first acceptance even if later p would pass
    let d = holm_correct(&[0.02, 0.021, 0.04], 0.05);
    assert!(d.iter().all(|x| !x.rejected));
    let d = holm_correct(&[0.01, 0.04], 0.05);
    assert!(d[0].rejected && d[1].rejected);
}

#[test]
fn mean_ranks_match_counting_oracle() {
    let mut r = rng::stream(71, &[]);
    for _ in 0..20 {
        let scores: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| r.gen_range(0..5) as f64 / 4.0).collect()).collect();
        let got = mean_ranks(&scores, false).unwrap();
        let mut want = vec![0.0; 4];
        for b in 0..6 {
            let col: Vec<f64> = scores.iter().map(|s| s[b]).collect();
            for (w, rk) in want.iter_mut().zip(oracle_ranks(&col)) {
                *w += rk / 6.0;
            }
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregate_matches_two_pass_formula() {
    let mut r = rng::stream(72, &[]);
    let seeds: Vec<SeedResult> = (0..7)
        .map(|s| SeedResult {
            seed: s,
            mean_loss: r.gen_range(0.1..2.0),
            mean_accuracy: r.gen_range(0.4..1.0),
        })
        .collect();
    let rep = aggregate("d", "nosplit", "full", &seeds).unwrap();
    let (m, s) = two_pass_mean_std(&seeds.iter().map(|x| x.mean_accuracy).collect::<Vec<_>>());
    assert!((rep.accuracy_mean - m).abs() <= 1e-12 && (rep.accuracy_std - s).abs() <= 1e-12);
    assert_eq!(rep.seed_count, 7);
    let one = aggregate("d", "nosplit", "full", &seeds[..1]).unwrap();
    assert_eq!(one.accuracy_std, 0.0);
    assert!(aggregate("d", "nosplit", "full", &[]).is_err());
}
