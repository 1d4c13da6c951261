//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use chameleon_core::autodiff::{NodeId, Tape};
use chameleon_core::data::DatasetTable;
use chameleon_core::ValueGrid;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so vanishing gradients are judged on absolute error.
pub const FD_FLOOR: f64 = 1e-6;

pub fn random_grid<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> ValueGrid {
    ValueGrid::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Like `random_grid` but keeps entries at least `gap` away from zero so
/// finite differences never straddle a ReLU kink.
pub fn random_grid_off_zero<R: Rng>(rng: &mut R, rows: usize, cols: usize, gap: f64) -> ValueGrid {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    ValueGrid::from_vec(rows, cols, data).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Worst relative error between reverse-mode gradients and central
/// differences of the scalar produced by `build` over every input entry.
pub fn fd_check(inputs: &[ValueGrid], build: impl Fn(&mut Tape, &[NodeId]) -> NodeId) -> f64 {
    let eval = |xs: &[ValueGrid]| {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &ids);
        tape.value(out).get(0, 0)
    };
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&mut tape, &ids);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let zero = ValueGrid::zeros(x.rows(), x.cols());
        let g = grads.get(ids[i]).unwrap_or(&zero);
        for e in 0..x.data().len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[e], numeric));
        }
    }
    worst
}

/// Rank by counting: `#smaller + (#equal + 1) / 2`.
pub fn oracle_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p-value by enumerating all sign assignments.
pub fn brute_force_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let ranks = oracle_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let dev = (observed - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - total / 2.0).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

pub fn two_pass_mean_std(xs: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    for x in xs {
        sum += x;
    }
    let mean = sum / xs.len() as f64;
    let mut ss = 0.0;
    for x in xs {
        ss += (x - mean) * (x - mean);
    }
    (mean, (ss / xs.len() as f64).sqrt())
}

/// Uniform random table with `features` columns and balanced classes.
pub fn random_table<R: Rng>(rng: &mut R, features: usize, per_class: usize, classes: usize) -> DatasetTable {
    let n = per_class * classes;
    DatasetTable::new(
        "random",
        (0..features).map(|j| format!("f{j}")).collect(),
        random_grid(rng, n, features, 0.0, 1.0),
        (0..n).map(|i| i % classes).collect(),
        (0..classes).map(|c| c.to_string()).collect(),
    )
    .unwrap()
}

/// A uniformly random permutation of `0..n`.
pub fn permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
