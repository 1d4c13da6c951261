//! Aggregation over seeds, paired Wilcoxon signed-rank tests, Holm's
//! step-down correction and mean ranks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact null
/// distribution; beyond it the normal approximation is used.
pub const EXACT_MAX_N: usize = 15;
pub const MIN_PAIRS: usize = 5;
pub const ALPHA: f64 = 0.05;

/// Arithmetic mean and population standard deviation; `(NaN, NaN)` when
/// empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mean_loss: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub mode: String,
    pub variant: String,
    pub seeds: Vec<SeedResult>,
    pub seed_count: usize,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

pub fn aggregate(dataset: &str, mode: &str, variant: &str, seeds: &[SeedResult]) -> Result<RunReport> {
    if seeds.is_empty() {
        return Err(Error::Input("aggregate needs at least one seed".into()));
    }
    let losses: Vec<f64> = seeds.iter().map(|s| s.mean_loss).collect();
    let accs: Vec<f64> = seeds.iter().map(|s| s.mean_accuracy).collect();
    let (loss_mean, loss_std) = mean_std(&losses);
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    Ok(RunReport {
        dataset: dataset.to_owned(),
        mode: mode.to_owned(),
        variant: variant.to_owned(),
        seeds: seeds.to_vec(),
        seed_count: seeds.len(),
        loss_mean,
        loss_std,
        accuracy_mean,
        accuracy_std,
    })
}

/// Ranks `1..=n` of `xs` in ascending order with ties averaged.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with non-zero difference.
    pub n: usize,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided paired signed-rank test of `a` against `b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::Input(format!(
            "signed-rank test needs at least {MIN_PAIRS} pairs, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Input("paired samples contain non-finite values".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::UndefinedTest("all paired differences are zero".into()));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= EXACT_MAX_N {
        // Doubled ranks are integers even with ties.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = (w_plus * 2.0).round() as i64;
        let dev = (2 * observed - total as i64).abs();
        let hits: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= dev)
            .map(|(_, c)| c)
            .sum();
        let p = hits as f64 / (1u64 << n) as f64;
        return Ok(WilcoxonResult {
            n,
            w_plus,
            p_value: p.min(1.0),
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (w_plus - mean).abs() / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        p_value: p,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolmDecision {
    /// Position in the input slice.
    pub index: usize,
    pub p_value: f64,
    pub threshold: f64,
    pub rejected: bool,
}

/// Holm's step-down procedure. Decisions are returned in input order.
pub fn holm_correct(p_values: &[f64], alpha: f64) -> Vec<HolmDecision> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut out = vec![
        HolmDecision {
            index: 0,
            p_value: 0.0,
            threshold: 0.0,
            rejected: false
        };
        m
    ];
    let mut still_rejecting = true;
    for (i, &idx) in order.iter().enumerate() {
        let threshold = alpha / (m - i) as f64;
        let p = p_values[idx];
        still_rejecting = still_rejecting && p <= threshold;
        out[idx] = HolmDecision {
            index: idx,
            p_value: p,
            threshold,
            rejected: still_rejecting,
        };
    }
    out
}

/// Mean rank of each variant over blocks; `scores[v][b]` is variant `v` on
/// block `b`. Rank 1 is best.
pub fn mean_ranks(scores: &[Vec<f64>], higher_is_better: bool) -> Result<Vec<f64>> {
    let v = scores.len();
    if v == 0 {
        return Err(Error::Input("no variants to rank".into()));
    }
    let blocks = scores[0].len();
    if blocks == 0 || scores.iter().any(|s| s.len() != blocks) {
        return Err(Error::Input("score matrix is empty or ragged".into()));
    }
    if scores.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Input("score matrix has missing cells".into()));
    }
    let mut sums = vec![0.0; v];
    for b in 0..blocks {
        let col: Vec<f64> = scores
            .iter()
            .map(|s| if higher_is_better { -s[b] } else { s[b] })
            .collect();
        for (sum, r) in sums.iter_mut().zip(average_ranks(&col)) {
            *sum += r;
        }
    }
    Ok(sums.into_iter().map(|s| s / blocks as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    /// `None` when the test is undefined (identical scores, too few pairs).
    pub p_value: Option<f64>,
    pub threshold: Option<f64>,
    pub rejected: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub metric: String,
    pub variants: Vec<String>,
    pub blocks: usize,
    pub mean_ranks: Vec<f64>,
    pub pairs: Vec<PairwiseTest>,
    /// Maximal groups of rank-adjacent variants with no significant
    /// difference between any two members.
    pub cliques: Vec<Vec<String>>,
}

/// Pairwise tests over all variant pairs, Holm-corrected as one family.
pub fn significance_table(
    metric: &str,
    variants: &[String],
    scores: &[Vec<f64>],
    higher_is_better: bool,
    alpha: f64,
) -> Result<SignificanceTable> {
    if variants.len() != scores.len() {
        return Err(Error::Input("one score row per variant required".into()));
    }
    let ranks = mean_ranks(scores, higher_is_better)?;
    let mut pairs = Vec::new();
    let mut defined = Vec::new();
    for i in 0..variants.len() {
        for j in i + 1..variants.len() {
            let (p, note) = match wilcoxon_signed_rank(&scores[i], &scores[j]) {
                Ok(w) => (Some(w.p_value), None),
                Err(e @ (Error::UndefinedTest(_) | Error::Input(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            if let Some(p) = p {
                defined.push((pairs.len(), p));
            }
            pairs.push(PairwiseTest {
                a: variants[i].clone(),
                b: variants[j].clone(),
                p_value: p,
                threshold: None,
                rejected: false,
                note,
            });
        }
    }
    let ps: Vec<f64> = defined.iter().map(|(_, p)| *p).collect();
    for (d, (pair_idx, _)) in holm_correct(&ps, alpha).into_iter().zip(&defined) {
        pairs[*pair_idx].threshold = Some(d.threshold);
        pairs[*pair_idx].rejected = d.rejected;
    }
    let cliques = cliques(variants, &ranks, &pairs);
    Ok(SignificanceTable {
        metric: metric.to_owned(),
        variants: variants.to_vec(),
        blocks: scores[0].len(),
        mean_ranks: ranks,
        pairs,
        cliques,
    })
}

fn cliques(variants: &[String], ranks: &[f64], pairs: &[PairwiseTest]) -> Vec<Vec<String>> {
    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.sort_by(|&a, &b| ranks[a].total_cmp(&ranks[b]).then(a.cmp(&b)));
    let differs = |x: usize, y: usize| {
        pairs.iter().any(|p| {
            p.rejected
                && ((p.a == variants[x] && p.b == variants[y]) || (p.a == variants[y] && p.b == variants[x]))
        })
    };
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for start in 0..order.len() {
        let mut end = start;
        while end + 1 < order.len() && (start..=end).all(|k| !differs(order[k], order[end + 1])) {
            end += 1;
        }
        if end > start && !groups.iter().any(|&(s, e)| s <= start && end <= e) {
            groups.push((start, end));
        }
    }
    groups
        .into_iter()
        .map(|(s, e)| order[s..=e].iter().map(|&i| variants[i].clone()).collect())
        .collect()
}
