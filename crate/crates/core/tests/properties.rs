mod common;

use chameleon_core::encoder::{enc, phi_forward, EncoderParams};
use chameleon_core::rng;
use chameleon_core::sampler::{make_split, pad_task, oracle_task, sample_train_task, Mode, SamplerConfig};
use chameleon_core::stats::{holm_correct, mean_ranks, wilcoxon_signed_rank};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reordering_is_equivariant_and_alignment_invariant(f in 3usize..=10, seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        let table = random_table(&mut r, f, 40, 2);
        let split = make_split(&table, Mode::NoSplit, seed).unwrap();
        let task = sample_train_task(&table, &split, &SamplerConfig::default(), &mut r).unwrap();
        let params = EncoderParams::glorot(20, f, &mut r);
        let perm = permutation(&mut r, task.num_sampled_features());
        let x = &task.x_train;
        let xp = x.select_columns(&perm);
        let pi = phi_forward(x, &params).unwrap();
        let pip = phi_forward(&xp, &params).unwrap();
        prop_assert!(pip.grid().max_abs_diff(&pi.grid().select_rows(&perm)) <= 1e-9);
        prop_assert!(enc(&xp, &params).unwrap().max_abs_diff(&enc(x, &params).unwrap()) <= 1e-9);
        for s in pi.grid().row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn padding_and_oracle_layouts_keep_values(f in 3usize..=10, seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[1]);
        let table = random_table(&mut r, f, 40, 3);
        let split = make_split(&table, Mode::NoSplit, seed).unwrap();
        let task = sample_train_task(&table, &split, &SamplerConfig::default(), &mut r).unwrap();
        let m = task.num_sampled_features();
        let padded = pad_task(&task).unwrap();
        let oracle = oracle_task(&task);
        prop_assert_eq!(padded.x_train.cols(), f);
        prop_assert_eq!(oracle.x_train.cols(), f);
        for (j, &c) in task.feature_indices.iter().enumerate() {
            prop_assert_eq!(padded.x_train.column(j), task.x_train.column(j));
            prop_assert_eq!(oracle.x_train.column(c), task.x_train.column(j));
        }
        for j in m..f {
            prop_assert!(padded.x_train.column(j).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn wilcoxon_is_symmetric(a in prop::collection::vec(0.0f64..1.0, 5..30), shift in -0.2f64..0.2) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + (i % 3) as f64 * 0.01).collect();
        let (ab, ba) = (wilcoxon_signed_rank(&a, &b), wilcoxon_signed_rank(&b, &a));
        match (ab, ba) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x.p_value, y.p_value);
                prop_assert!((0.0..=1.0).contains(&x.p_value));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric definedness"),
        }
    }

    #[test]
    fn holm_rejections_grow_with_alpha(ps in prop::collection::vec(0.0f64..0.2, 1..12), a1 in 0.001f64..0.1, a2 in 0.001f64..0.1) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let dl = holm_correct(&ps, lo);
        let dh = holm_correct(&ps, hi);
        for (l, h) in dl.iter().zip(&dh) {
            prop_assert!(!l.rejected || h.rejected);
        }
        // thresholds increase along the sorted p-values
        let mut sorted = dl.clone();
        sorted.sort_by(|x, y| x.p_value.total_cmp(&y.p_value).then(x.index.cmp(&y.index)));
        for w in sorted.windows(2) {
            prop_assert!(w[0].threshold <= w[1].threshold);
        }
    }

    #[test]
    fn ranks_sum_per_block(v in 2usize..7, blocks in 1usize..8, seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        // coarse values so ties occur
        let scores: Vec<Vec<f64>> = (0..v)
            .map(|_| (0..blocks).map(|_| (rand::Rng::gen_range(&mut r, 0..4)) as f64).collect())
            .collect();
        let mr = mean_ranks(&scores, true).unwrap();
        let total: f64 = mr.iter().sum();
        prop_assert!((total - (v * (v + 1)) as f64 / 2.0).abs() < 1e-9);
    }
}
