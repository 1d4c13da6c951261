//! Named parameter storage, Glorot initialization and optimizers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::grid::ValueGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Parameters with co-shaped gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ValueGrid>,
    grads: Vec<ValueGrid>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ValueGrid) -> ParamId {
        self.grads.push(ValueGrid::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name.into());
        ParamId(self.values.len() - 1)
    }

    /// Builds a store from `(name, value)` pairs with zeroed gradients.
    pub fn from_named(params: impl IntoIterator<Item = (String, ValueGrid)>) -> Self {
        let mut store = Self::new();
        for (name, value) in params {
            store.add(name, value);
        }
        store
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &ValueGrid {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ValueGrid {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[ValueGrid] {
        &self.values
    }

    pub fn grad(&self, id: ParamId) -> &ValueGrid {
        &self.grads[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Records every parameter as a tape leaf, in id order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Adds the gradients of `nodes` (as returned by [`bind`](Self::bind))
    /// to the accumulators. Parameters off the loss path receive nothing.
    pub fn accumulate(&mut self, grads: &Gradients, nodes: &[NodeId]) {
        debug_assert_eq!(nodes.len(), self.values.len());
        for (acc, &node) in self.grads.iter_mut().zip(nodes) {
            if let Some(g) = grads.get(node) {
                acc.add_scaled(g, 1.0);
            }
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(ValueGrid::is_finite)
    }

    /// Parameter-wise `self - other`, as a store with the same names.
    pub fn difference(&self, other: &ParamStore) -> Result<ParamStore> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (v, o) in out.values.iter_mut().zip(&other.values) {
            v.add_scaled(o, -1.0);
        }
        Ok(out)
    }

    /// `self += scale * other`, parameter-wise.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            v.add_scaled(o, scale);
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        let same = self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.same_shape(b));
        if same {
            Ok(())
        } else {
            Err(Error::dim(
                "param_store",
                "parameter stores differ in layout".to_string(),
            ))
        }
    }

    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(ValueGrid::is_finite)
    }
}

/// Uniform samples in `±sqrt(6 / (rows + cols))`.
pub fn glorot_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ValueGrid {
    assert!(rows > 0 && cols > 0, "glorot_init needs positive dimensions");
    let bound = glorot_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    ValueGrid::from_vec(rows, cols, data).expect("length matches by construction")
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<ValueGrid>,
    second: Vec<ValueGrid>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_config(store, AdamConfig::default())
    }

    pub fn with_config(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |v: &ValueGrid| ValueGrid::zeros(v.rows(), v.cols());
        Self {
            config,
            first: store.values.iter().map(zeros).collect(),
            second: store.values.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    /// The accumulators are left as they are.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        debug_assert_eq!(self.first.len(), store.values.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..store.values.len() {
            let grad = store.grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.values[i].data_mut();
            for j in 0..p.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

pub fn sgd_step(store: &mut ParamStore, lr: f64) {
    for (p, g) in store.values.iter_mut().zip(&store.grads) {
        p.add_scaled(g, -lr);
    }
}
