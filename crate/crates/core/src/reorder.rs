//! Supervised pretraining of the reordering network against ground-truth
//! feature positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross_entropy, Tape};
use crate::data::DatasetTable;
use crate::encoder::{phi_forward, phi_on_tape, EncoderParams, ReorderingMatrix};
use crate::error::{Error, Result};
use crate::grid::ValueGrid;
use crate::params::AdamState;
use crate::rng::{self, streams};
use crate::sampler::{sample_test_task, sample_train_task, SamplerConfig, SplitSpec, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReorderTrainConfig {
    /// One epoch is one sampled task and one update.
    pub epochs: usize,
    pub lr: f64,
    /// Tasks whose gradients are summed into each update.
    pub tasks_per_epoch: usize,
    pub seed: u64,
}

impl Default for ReorderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4000,
            lr: 1e-4,
            tasks_per_epoch: 1,
            seed: 0,
        }
    }
}

impl ReorderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("pretrain lr must be positive, got {}", self.lr)));
        }
        if self.tasks_per_epoch == 0 {
            return Err(Error::Config("tasks_per_epoch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean over rows of `-ln pi_pred[row, true position]`.
pub fn reorder_loss(pi_pred: &ReorderingMatrix, pi_true: &ValueGrid) -> Result<f64> {
    cross_entropy(pi_pred.grid(), pi_true)
}

#[derive(Debug, Clone)]
pub struct ReorderOutcome {
    pub encoder: EncoderParams,
    /// Loss of each epoch's task(s), measured before that epoch's update.
    pub trace: Vec<f64>,
}

/// Accumulates the reordering-loss gradient of one task into the encoder
/// and returns the loss.
fn accumulate_task_gradient(encoder: &mut EncoderParams, task: &Task) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = encoder.bind(&mut tape);
    let x = tape.leaf(task.x_train.clone());
    let pi = phi_on_tape(&mut tape, x, &vars, encoder.instances())?;
    let loss = tape.cross_entropy(pi, &task.pi_true)?;
    let grads = tape.backward(loss)?;
    encoder.store_mut().accumulate(&grads, &vars);
    Ok(tape.value(loss).get(0, 0))
}

pub fn reorder_train(
    mut encoder: EncoderParams,
    table: &DatasetTable,
    split: &SplitSpec,
    sampler: &SamplerConfig,
    cfg: &ReorderTrainConfig,
) -> Result<ReorderOutcome> {
    cfg.validate()?;
    let instances = sampler.shots_train * table.num_classes();
    if encoder.instances() != instances || encoder.k() != table.num_features() {
        return Err(Error::Config(format!(
            "encoder sized for N={}, K={} but tasks have N={instances}, K={}",
            encoder.instances(),
            encoder.k(),
            table.num_features()
        )));
    }
    let mut rng = rng::stream(cfg.seed, &[streams::PRETRAIN]);
    let mut adam = AdamState::new(encoder.store());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        encoder.store_mut().zero_grads();
        let mut loss = 0.0;
        for _ in 0..cfg.tasks_per_epoch {
            let task = sample_train_task(table, split, sampler, &mut rng)?;
            loss += accumulate_task_gradient(&mut encoder, &task)?;
        }
        loss /= cfg.tasks_per_epoch as f64;
        trace.push(loss);
        if !loss.is_finite() || !encoder.store().grads_finite() {
            return Err(Error::Training {
                step: epoch,
                reason: format!("reordering loss became {loss}"),
                trace,
            });
        }
        adam.step(encoder.store_mut(), cfg.lr);
    }
    Ok(ReorderOutcome { encoder, trace })
}

/// Fraction of sampled feature occurrences whose argmax position equals
/// the canonical index, over `n_tasks` test tasks.
pub fn alignment_recovery<R: Rng + ?Sized>(
    encoder: &EncoderParams,
    table: &DatasetTable,
    split: &SplitSpec,
    sampler: &SamplerConfig,
    n_tasks: usize,
    rng: &mut R,
) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for _ in 0..n_tasks {
        let task = sample_test_task(table, split, sampler, rng)?;
        let pi = phi_forward(&task.x_train, encoder)?;
        for (j, &c) in task.feature_indices.iter().enumerate() {
            total += 1;
            if pi.grid().argmax_row(j) == c {
                hits += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
