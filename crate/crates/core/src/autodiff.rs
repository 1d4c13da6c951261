//! Tape-based reverse-mode differentiation over [`ValueGrid`]s.
//!
//! Operations are recorded in evaluation order, so the tape index order is
//! already a topological order and backward is a single reverse sweep.
//! Only the handful of ops the networks in this crate need are provided.
//!
//! `cross_entropy` applied directly to the output of `softmax_rows` is
//! fused: the gradient reaching the logits is `(p - t) / rows` and the
//! loss value is computed with a log-sum-exp on the logits, so a
//! saturated softmax never produces `ln 0`.

use crate::error::{Error, Result};
use crate::grid::ValueGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// Adds a `1 x cols` bias to every row.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    CrossEntropy {
        pred: NodeId,
        target: ValueGrid,
        /// Logits node when `pred` is a softmax output.
        fused_logits: Option<NodeId>,
    },
    /// Scalar `sum(a * weights)`; a probe for gradient checks.
    WeightedSum(NodeId, ValueGrid),
}

#[derive(Debug)]
struct Node {
    value: ValueGrid,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<ValueGrid>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, node: NodeId) -> Option<&ValueGrid> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ValueGrid, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, node: NodeId) -> &ValueGrid {
        &self.nodes[node.0].value
    }

    pub fn leaf(&mut self, value: ValueGrid) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim(
                "add_bias",
                format!(
                    "bias {}x{} for input {}x{}",
                    bv.rows(),
                    bv.cols(),
                    av.rows(),
                    av.cols()
                ),
            ));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Mean over rows of `-ln pred[target]`. `target` rows must be one-hot.
    pub fn cross_entropy(&mut self, pred: NodeId, target: &ValueGrid) -> Result<NodeId> {
        let pv = self.value(pred);
        if !pv.same_shape(target) {
            return Err(Error::dim(
                "cross_entropy",
                format!("pred {:?} vs target {:?}", pv.shape(), target.shape()),
            ));
        }
        if pv.rows() == 0 {
            return Err(Error::Domain("cross-entropy over zero rows".into()));
        }
        let fused_logits = match self.nodes[pred.0].op {
            Op::SoftmaxRows(logits) => Some(logits),
            _ => None,
        };
        let loss = match fused_logits {
            Some(logits) => log_softmax_cross_entropy(self.value(logits), target),
            None => probability_cross_entropy(pv, target),
        };
        Ok(self.push(
            ValueGrid::scalar(loss),
            Op::CrossEntropy {
                pred,
                target: target.clone(),
                fused_logits,
            },
        ))
    }

    pub fn weighted_sum(&mut self, a: NodeId, weights: &ValueGrid) -> Result<NodeId> {
        let av = self.value(a);
        if !av.same_shape(weights) {
            return Err(Error::dim(
                "weighted_sum",
                format!("{:?} vs {:?}", av.shape(), weights.shape()),
            ));
        }
        let s = av.data().iter().zip(weights.data()).map(|(x, w)| x * w).sum();
        Ok(self.push(ValueGrid::scalar(s), Op::WeightedSum(a, weights.clone())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<ValueGrid>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(ValueGrid::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = g.matmul(&bv.transpose())?;
                    let db = av.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::AddBias(a, bias) => {
                    let mut db = ValueGrid::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Relu(a) => {
                    let input = self.value(*a);
                    let mut da = g.clone();
                    for (d, &x) in da.data_mut().iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    // dz = p * (g - <g, p>) per row
                    let p = &node.value;
                    let mut dz = ValueGrid::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for (c, d) in dz.row_mut(r).iter_mut().enumerate() {
                            *d = pr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dz);
                }
                Op::CrossEntropy {
                    pred,
                    target,
                    fused_logits,
                } => {
                    let scale = g.get(0, 0) / target.rows() as f64;
                    let p = self.value(*pred);
                    match fused_logits {
                        Some(logits) => {
                            let mut dz = p.clone();
                            dz.add_scaled(target, -1.0);
                            dz.data_mut().iter_mut().for_each(|v| *v *= scale);
                            accumulate(&mut grads, *logits, dz);
                        }
                        None => {
                            let mut dp = ValueGrid::zeros(p.rows(), p.cols());
                            for ((d, &pv), &t) in
                                dp.data_mut().iter_mut().zip(p.data()).zip(target.data())
                            {
                                if t != 0.0 {
                                    *d = -scale * t / pv.max(f64::MIN_POSITIVE);
                                }
                            }
                            accumulate(&mut grads, *pred, dp);
                        }
                    }
                }
                Op::WeightedSum(a, w) => {
                    let s = g.get(0, 0);
                    accumulate(&mut grads, *a, w.map(|v| v * s));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<ValueGrid>], node: NodeId, delta: ValueGrid) {
    match &mut grads[node.0] {
        Some(existing) => existing.add_scaled(&delta, 1.0),
        slot @ None => *slot = Some(delta),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &ValueGrid) -> ValueGrid {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_cross_entropy(logits: &ValueGrid, target: &ValueGrid) -> f64 {
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (zc, t) in z.iter().zip(target.row(r)) {
            if *t != 0.0 {
                total -= t * (zc - lse);
            }
        }
    }
    total / logits.rows() as f64
}

fn probability_cross_entropy(pred: &ValueGrid, target: &ValueGrid) -> f64 {
    let mut total = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        if *t != 0.0 {
            total -= t * p.max(f64::MIN_POSITIVE).ln();
        }
    }
    total / pred.rows() as f64
}

/// Loss value of `cross_entropy` on plain grids, without a tape.
pub fn cross_entropy(pred: &ValueGrid, target: &ValueGrid) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone());
    let loss = tape.cross_entropy(p, target)?;
    Ok(tape.value(loss).get(0, 0))
}

pub fn relu(x: &ValueGrid) -> ValueGrid {
    x.map(|v| v.max(0.0))
}
