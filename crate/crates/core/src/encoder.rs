//! The reordering network and the alignment operator.
//!
//! Each of a task's `F` features is represented by its column of `N`
//! instance values and mapped independently by the same three-layer
//! network `N -> 8 -> 16 -> K` followed by a softmax, giving one row of
//! the `F x K` reordering matrix. Because the map is shared across
//! features, permuting the input columns permutes the rows of the matrix
//! identically, and the product `X * Pi` is invariant to column order.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::data::DatasetTable;
use crate::error::{Error, Result};
use crate::grid::ValueGrid;
use crate::params::{glorot_init, ParamStore};
use crate::sampler::{sample_test_task, SamplerConfig, SplitSpec};

/// Hidden channel widths of the per-feature map.
pub const ENCODER_WIDTHS: [usize; 2] = [8, 16];

const NAMES: [&str; 6] = ["enc.w1", "enc.b1", "enc.w2", "enc.b2", "enc.w3", "enc.b3"];

/// Weights are stored input-major (`in x out`), biases as `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    store: ParamStore,
    instances: usize,
    k: usize,
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(instances: usize, k: usize, rng: &mut R) -> Self {
        let [h1, h2] = ENCODER_WIDTHS;
        let mut store = ParamStore::new();
        store.add(NAMES[0], glorot_init(instances, h1, rng));
        store.add(NAMES[1], ValueGrid::zeros(1, h1));
        store.add(NAMES[2], glorot_init(h1, h2, rng));
        store.add(NAMES[3], ValueGrid::zeros(1, h2));
        store.add(NAMES[4], glorot_init(h2, k, rng));
        store.add(NAMES[5], ValueGrid::zeros(1, k));
        Self {
            store,
            instances,
            k,
        }
    }

    /// Rebuilds parameters from a store, checking names and shapes.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        if store.len() != NAMES.len() || store.names().iter().zip(NAMES).any(|(a, b)| a != b) {
            return Err(Error::Input(format!(
                "encoder parameters must be {NAMES:?}, got {:?}",
                store.names()
            )));
        }
        let v = store.values();
        let instances = v[0].rows();
        let k = v[4].cols();
        let [h1, h2] = ENCODER_WIDTHS;
        let expected = [
            (instances, h1),
            (1, h1),
            (h1, h2),
            (1, h2),
            (h2, k),
            (1, k),
        ];
        for (i, (g, e)) in v.iter().zip(expected).enumerate() {
            if g.shape() != e {
                return Err(Error::dim(
                    "encoder",
                    format!("{} is {:?}, expected {e:?}", NAMES[i], g.shape()),
                ));
            }
        }
        Ok(Self {
            store,
            instances,
            k,
        })
    }

    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.store.bind(tape)
    }
}

/// Row-stochastic `F x K` matrix; row `j` distributes original feature `j`
/// over the `K` target positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderingMatrix(ValueGrid);

impl ReorderingMatrix {
    pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(grid: ValueGrid) -> Result<Self> {
        for (r, s) in grid.row_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > Self::ROW_SUM_TOLERANCE {
                return Err(Error::Contract(format!("reordering row {r} sums to {s}")));
            }
        }
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("reordering entries must lie in [0, 1]".into()));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &ValueGrid {
        &self.0
    }

    pub fn into_grid(self) -> ValueGrid {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }
}

/// Records the reordering network on `tape` for the `N x F` block `x`;
/// returns the `F x K` softmax node.
pub fn phi_on_tape(tape: &mut Tape, x: NodeId, vars: &[NodeId], instances: usize) -> Result<NodeId> {
    let rows = tape.value(x).rows();
    if rows != instances {
        return Err(Error::dim(
            "phi_forward",
            format!("block has {rows} instances, encoder expects {instances}"),
        ));
    }
    if tape.value(x).cols() == 0 {
        return Err(Error::dim("phi_forward", "block has no features"));
    }
    let features = tape.transpose(x);
    let z1 = tape.matmul(features, vars[0])?;
    let z1 = tape.add_bias(z1, vars[1])?;
    let h1 = tape.relu(z1);
    let z2 = tape.matmul(h1, vars[2])?;
    let z2 = tape.add_bias(z2, vars[3])?;
    let h2 = tape.relu(z2);
    let z3 = tape.matmul(h2, vars[4])?;
    let z3 = tape.add_bias(z3, vars[5])?;
    Ok(tape.softmax_rows(z3))
}

/// Records `x * phi(x)`; returns `(aligned, pi)`.
pub fn enc_on_tape(
    tape: &mut Tape,
    x: NodeId,
    vars: &[NodeId],
    instances: usize,
) -> Result<(NodeId, NodeId)> {
    let pi = phi_on_tape(tape, x, vars, instances)?;
    let aligned = tape.matmul(x, pi)?;
    Ok((aligned, pi))
}

pub fn phi_forward(x: &ValueGrid, params: &EncoderParams) -> Result<ReorderingMatrix> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let xn = tape.leaf(x.clone());
    let pi = phi_on_tape(&mut tape, xn, &vars, params.instances)?;
    Ok(ReorderingMatrix(tape.value(pi).clone()))
}

/// `x~[m, n] = sum_j x[m, j] * pi[j, n]`
pub fn align(x: &ValueGrid, pi: &ReorderingMatrix) -> Result<ValueGrid> {
    if pi.rows() != x.cols() {
        return Err(Error::dim(
            "align",
            format!("{} features but a {}-row reordering", x.cols(), pi.rows()),
        ));
    }
    x.matmul(pi.grid())
}

pub fn enc(x: &ValueGrid, params: &EncoderParams) -> Result<ValueGrid> {
    align(x, &phi_forward(x, params)?)
}

/// Average reordering row per canonical feature over sampled tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `K x K`: row `c` is the mean predicted position distribution of
    /// canonical feature `c`; rows of never-sampled features are zero.
    pub grid: ValueGrid,
    pub counts: Vec<usize>,
}

impl Heatmap {
    /// Fraction of sampled features whose argmax equals their canonical
    /// position, weighted by occurrence.
    pub fn diagonal_mass(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let k = self.grid.rows();
        (0..k)
            .map(|c| self.grid.get(c, c) * self.counts[c] as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Samples `n_tasks` test tasks and averages each sampled feature's
/// reordering row into the row of its canonical index.
pub fn heatmap<R: Rng + ?Sized>(
    table: &DatasetTable,
    split: &SplitSpec,
    params: &EncoderParams,
    sampler: &SamplerConfig,
    n_tasks: usize,
    rng: &mut R,
) -> Result<Heatmap> {
    let k = params.k();
    let mut grid = ValueGrid::zeros(k, k);
    let mut counts = vec![0usize; k];
    for _ in 0..n_tasks {
        let task = sample_test_task(table, split, sampler, rng)?;
        let pi = phi_forward(&task.x_train, params)?;
        for (j, &c) in task.feature_indices.iter().enumerate() {
            counts[c] += 1;
            for (acc, v) in grid.row_mut(c).iter_mut().zip(pi.grid().row(j)) {
                *acc += v;
            }
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            grid.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok(Heatmap { grid, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;

    fn random_block(n: usize, f: usize, seed: u64) -> ValueGrid {
        let mut r = rng::stream(seed, &[100]);
        ValueGrid::from_vec(n, f, (0..n * f).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn params(n: usize, k: usize, seed: u64) -> EncoderParams {
        EncoderParams::glorot(n, k, &mut rng::stream(seed, &[101]))
    }

    #[test]
    fn layer_shapes() {
        let p = params(20, 7, 1);
        let shapes: Vec<_> = p.store().values().iter().map(ValueGrid::shape).collect();
        assert_eq!(shapes, vec![(20, 8), (1, 8), (8, 16), (1, 16), (16, 7), (1, 7)]);
        assert!(EncoderParams::from_store(p.store().clone()).is_ok());
    }

    #[test]
    fn rows_are_stochastic() {
        let p = params(20, 6, 2);
        let pi = phi_forward(&random_block(20, 4, 3), &p).unwrap();
        assert_eq!(pi.grid().shape(), (4, 6));
        for s in pi.grid().row_sums() {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn instance_count_mismatch_is_error() {
        let p = params(20, 6, 2);
        assert!(matches!(
            phi_forward(&random_block(19, 4, 3), &p),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn duplicated_columns_get_identical_rows() {
        let p = params(10, 5, 4);
        let x = random_block(10, 3, 5);
        let x = x.select_columns(&[0, 1, 2, 1]);
        let pi = phi_forward(&x, &p).unwrap();
        assert_eq!(pi.grid().row(1), pi.grid().row(3));
    }

    #[test]
    fn permuting_columns_permutes_rows() {
        let p = params(10, 6, 6);
        let x = random_block(10, 5, 7);
        let perm = vec![3, 0, 4, 1, 2];
        let base = phi_forward(&x, &p).unwrap();
        let permuted = phi_forward(&x.select_columns(&perm), &p).unwrap();
        for (j, &src) in perm.iter().enumerate() {
            for c in 0..6 {
                assert!((permuted.grid().get(j, c) - base.grid().get(src, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn align_identity_and_one_hot() {
        let x = random_block(4, 3, 8);
        let id = ReorderingMatrix::new(ValueGrid::identity(3)).unwrap();
        assert_eq!(align(&x, &id).unwrap(), x);

        let mut hot = ValueGrid::zeros(3, 5);
        hot.set(0, 4, 1.0);
        hot.set(1, 0, 1.0);
        hot.set(2, 2, 1.0);
        let out = align(&x, &ReorderingMatrix::new(hot).unwrap()).unwrap();
        assert_eq!(out.column(4), x.column(0));
        assert_eq!(out.column(0), x.column(1));
        assert_eq!(out.column(2), x.column(2));
        assert_eq!(out.column(1), vec![0.0; 4]);
        assert_eq!(out.column(3), vec![0.0; 4]);
    }

    #[test]
    fn align_matches_summation() {
        let x = random_block(4, 3, 9);
        let raw = random_block(3, 5, 10);
        let mut pi = raw.clone();
        for r in 0..3 {
            let s: f64 = raw.row(r).iter().sum();
            pi.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        let pi = ReorderingMatrix::new(pi).unwrap();
        let got = align(&x, &pi).unwrap();
        for m in 0..4 {
            for n in 0..5 {
                let mut want = 0.0;
                for j in 0..3 {
                    want += x.get(m, j) * pi.grid().get(j, n);
                }
                assert!((got.get(m, n) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn align_rejects_mismatch() {
        let x = random_block(4, 3, 9);
        let pi = ReorderingMatrix::new(ValueGrid::identity(2)).unwrap();
        assert!(matches!(align(&x, &pi), Err(Error::Dimension { .. })));
    }

    #[test]
    fn enc_is_column_order_invariant() {
        let p = params(12, 7, 11);
        let x = random_block(12, 5, 12);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng::stream(13, &[]));
        let a = enc(&x, &p).unwrap();
        let b = enc(&x.select_columns(&perm), &p).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn enc_of_zero_block_is_zero() {
        let p = params(12, 7, 14);
        let out = enc(&ValueGrid::zeros(12, 3), &p).unwrap();
        assert_eq!(out.shape(), (12, 7));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reordering_matrix_validates_rows() {
        assert!(ReorderingMatrix::new(ValueGrid::filled(2, 2, 0.4)).is_err());
    }
}
