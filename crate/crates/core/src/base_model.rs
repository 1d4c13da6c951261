//! Feed-forward classifier on the aligned `K`-wide space.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::grid::ValueGrid;
use crate::params::{glorot_init, ParamStore};

pub const HIDDEN_WIDTH: usize = 16;

const NAMES: [&str; 6] = ["base.w1", "base.b1", "base.w2", "base.b2", "base.w3", "base.b3"];

#[derive(Debug, Clone, PartialEq)]
pub struct BaseModelParams {
    store: ParamStore,
    k: usize,
    classes: usize,
}

impl BaseModelParams {
    pub fn glorot<R: Rng + ?Sized>(k: usize, classes: usize, rng: &mut R) -> Self {
        let h = HIDDEN_WIDTH;
        let mut store = ParamStore::new();
        store.add(NAMES[0], glorot_init(k, h, rng));
        store.add(NAMES[1], ValueGrid::zeros(1, h));
        store.add(NAMES[2], glorot_init(h, h, rng));
        store.add(NAMES[3], ValueGrid::zeros(1, h));
        store.add(NAMES[4], glorot_init(h, classes, rng));
        store.add(NAMES[5], ValueGrid::zeros(1, classes));
        Self { store, k, classes }
    }

    pub fn zeros(k: usize, classes: usize) -> Self {
        let h = HIDDEN_WIDTH;
        let shapes = [(k, h), (1, h), (h, h), (1, h), (h, classes), (1, classes)];
        let store = ParamStore::from_named(
            NAMES
                .iter()
                .zip(shapes)
                .map(|(n, (r, c))| (n.to_string(), ValueGrid::zeros(r, c))),
        );
        Self { store, k, classes }
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        if store.len() != NAMES.len() || store.names().iter().zip(NAMES).any(|(a, b)| a != b) {
            return Err(Error::Input(format!(
                "base model parameters must be {NAMES:?}, got {:?}",
                store.names()
            )));
        }
        let v = store.values();
        let (k, classes, h) = (v[0].rows(), v[4].cols(), HIDDEN_WIDTH);
        let expected = [(k, h), (1, h), (h, h), (1, h), (h, classes), (1, classes)];
        for (i, (g, e)) in v.iter().zip(expected).enumerate() {
            if g.shape() != e {
                return Err(Error::dim(
                    "base_model",
                    format!("{} is {:?}, expected {e:?}", NAMES[i], g.shape()),
                ));
            }
        }
        Ok(Self { store, k, classes })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> usize {
        self.classes
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

/// Records the classifier on `tape`; returns the softmax output node.
pub fn predict_on_tape(tape: &mut Tape, x: NodeId, vars: &[NodeId], k: usize) -> Result<NodeId> {
    let cols = tape.value(x).cols();
    if cols != k {
        return Err(Error::dim(
            "predict",
            format!("input has {cols} columns, model expects {k}"),
        ));
    }
    let z1 = tape.matmul(x, vars[0])?;
    let z1 = tape.add_bias(z1, vars[1])?;
    let h1 = tape.relu(z1);
    let z2 = tape.matmul(h1, vars[2])?;
    let z2 = tape.add_bias(z2, vars[3])?;
    let h2 = tape.relu(z2);
    let z3 = tape.matmul(h2, vars[4])?;
    let z3 = tape.add_bias(z3, vars[5])?;
    Ok(tape.softmax_rows(z3))
}

/// Class probabilities, one row per instance.
pub fn predict(x_aligned: &ValueGrid, params: &BaseModelParams) -> Result<ValueGrid> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let x = tape.leaf(x_aligned.clone());
    let p = predict_on_tape(&mut tape, x, &vars, params.k)?;
    Ok(tape.value(p).clone())
}

pub fn task_loss(params: &BaseModelParams, x_aligned: &ValueGrid, y_onehot: &ValueGrid) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let x = tape.leaf(x_aligned.clone());
    let p = predict_on_tape(&mut tape, x, &vars, params.k)?;
    let loss = tape.cross_entropy(p, y_onehot)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Fraction of rows whose argmax matches the one-hot target.
pub fn accuracy(probs: &ValueGrid, y_onehot: &ValueGrid) -> f64 {
    if probs.rows() == 0 {
        return 0.0;
    }
    let hits = (0..probs.rows())
        .filter(|&r| y_onehot.get(r, probs.argmax_row(r)) == 1.0)
        .count();
    hits as f64 / probs.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::AdamState;
    use crate::rng;

    #[test]
    fn zero_model_predicts_uniform() {
        let p = BaseModelParams::zeros(5, 4);
        let x = ValueGrid::filled(3, 5, 0.3);
        let probs = predict(&x, &p).unwrap();
        assert!(probs.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let mut y = ValueGrid::zeros(3, 4);
        for r in 0..3 {
            y.set(r, r, 1.0);
        }
        assert!((task_loss(&p, &x, &y).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_probabilities() {
        let p = BaseModelParams::glorot(6, 3, &mut rng::stream(1, &[]));
        let mut r = rng::stream(2, &[]);
        let x = ValueGrid::from_vec(8, 6, (0..48).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let probs = predict(&x, &p).unwrap();
        for s in probs.row_sums() {
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert_eq!(probs, predict(&x, &p).unwrap());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = BaseModelParams::zeros(5, 2);
        assert!(matches!(
            predict(&ValueGrid::zeros(2, 4), &p),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn fits_separable_toy_task() {
        // two Gaussian-free blobs: class 0 near (0.2, 0.2), class 1 near (0.8, 0.8)
        let mut r = rng::stream(5, &[]);
        let n = 40;
        let mut x = ValueGrid::zeros(n, 2);
        let mut y = ValueGrid::zeros(n, 2);
        for i in 0..n {
            let c = i % 2;
            let center = if c == 0 { 0.2 } else { 0.8 };
            x.set(i, 0, center + r.gen_range(-0.15..0.15));
            x.set(i, 1, center + r.gen_range(-0.15..0.15));
            y.set(i, c, 1.0);
        }
        let mut p = BaseModelParams::glorot(2, 2, &mut rng::stream(6, &[]));
        let mut adam = AdamState::new(p.store());
        for _ in 0..200 {
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape);
            let xn = tape.leaf(x.clone());
            let probs = predict_on_tape(&mut tape, xn, &vars, 2).unwrap();
            let loss = tape.cross_entropy(probs, &y).unwrap();
            let g = tape.backward(loss).unwrap();
            p.store_mut().zero_grads();
            p.store_mut().accumulate(&g, &vars);
            adam.step(p.store_mut(), 0.01);
        }
        let acc = accuracy(&predict(&x, &p).unwrap(), &y);
        assert!(acc >= 0.95, "accuracy {acc}");
    }
}
