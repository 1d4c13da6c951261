//! Reptile meta-training of the combined initialization and the few-step
//! adaptation protocol used for evaluation.
//!
//! An initialization holds an optional encoder and a base model. Each
//! [`Variant`] decides how a task is presented (padded, oracle-aligned or
//! raw through the encoder) and which parameters adaptation and the
//! meta-update may touch.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::base_model::{accuracy, predict_on_tape, BaseModelParams};
use crate::data::DatasetTable;
use crate::encoder::{enc_on_tape, EncoderParams};
use crate::error::{Error, Result};
use crate::grid::ValueGrid;
use crate::params::{sgd_step, AdamState, ParamStore};
use crate::rng::{self, streams};
use crate::sampler::{oracle_task, pad_task, sample_train_task, SamplerConfig, SplitSpec, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Random,
    #[serde(rename = "yhat", alias = "yhat_pad")]
    YhatPad,
    Untrain,
    Full,
    Frozen,
    Oracle,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Random,
        Variant::YhatPad,
        Variant::Untrain,
        Variant::Full,
        Variant::Frozen,
        Variant::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Random => "random",
            Variant::YhatPad => "yhat",
            Variant::Untrain => "untrain",
            Variant::Full => "full",
            Variant::Frozen => "frozen",
            Variant::Oracle => "oracle",
        }
    }

    pub fn has_encoder(self) -> bool {
        matches!(self, Variant::Untrain | Variant::Full | Variant::Frozen)
    }

    pub fn needs_pretrained_encoder(self) -> bool {
        matches!(self, Variant::Full | Variant::Frozen)
    }

    pub fn encoder_trainable(self) -> bool {
        matches!(self, Variant::Untrain | Variant::Full)
    }

    pub fn meta_trains(self) -> bool {
        self != Variant::Random
    }

    /// The layout the variant's model consumes.
    pub fn present(self, task: &Task) -> Result<Task> {
        match self {
            Variant::Random | Variant::YhatPad => pad_task(task),
            Variant::Oracle => Ok(oracle_task(task)),
            Variant::Untrain | Variant::Full | Variant::Frozen => Ok(task.clone()),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(Variant::Random),
            "yhat" | "yhat_pad" | "pad" => Ok(Variant::YhatPad),
            "untrain" => Ok(Variant::Untrain),
            "full" => Ok(Variant::Full),
            "frozen" => Ok(Variant::Frozen),
            "oracle" => Ok(Variant::Oracle),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerOptimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    /// One meta-epoch is one meta-batch update.
    pub meta_epochs: usize,
    pub eval_steps: usize,
    pub inner_optimizer: InnerOptimizer,
    /// Meta-epochs averaged into each trace point.
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 1e-3,
            meta_lr: 0.01,
            inner_steps: 3,
            meta_batch: 16,
            meta_epochs: 20_000,
            eval_steps: 3,
            inner_optimizer: InnerOptimizer::Adam,
            trace_every: 100,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("inner_lr", self.inner_lr), ("meta_lr", self.meta_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.meta_batch == 0 {
            return Err(Error::Config("meta_batch must be at least 1".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Initialization shared across tasks: an optional encoder and the base
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedInit {
    pub encoder: Option<EncoderParams>,
    pub base: BaseModelParams,
}

impl CombinedInit {
    /// Builds the starting point of `variant`. The base model always comes
    /// from the same stream, so every variant of a seed starts from the
    /// same classifier weights.
    pub fn for_variant(
        variant: Variant,
        instances: usize,
        k: usize,
        classes: usize,
        seed: u64,
        pretrained: Option<&EncoderParams>,
    ) -> Result<Self> {
        let base = BaseModelParams::glorot(k, classes, &mut rng::stream(seed, &[streams::BASE_INIT]));
        let encoder = match variant {
            Variant::Random | Variant::YhatPad | Variant::Oracle => None,
            Variant::Untrain => Some(EncoderParams::glorot(
                instances,
                k,
                &mut rng::stream(seed, &[streams::ENCODER_INIT]),
            )),
            Variant::Full | Variant::Frozen => {
                let enc = pretrained.ok_or_else(|| {
                    Error::Config(format!("variant {variant} needs a pretrained encoder"))
                })?;
                Some(enc.clone())
            }
        };
        let init = Self { encoder, base };
        init.check_variant(variant)?;
        Ok(init)
    }

    pub fn check_variant(&self, variant: Variant) -> Result<()> {
        match (&self.encoder, variant.has_encoder()) {
            (Some(_), false) => Err(Error::Config(format!(
                "variant {variant} does not use an encoder but one was supplied"
            ))),
            (None, true) => Err(Error::Config(format!("variant {variant} requires an encoder"))),
            (Some(enc), true) if enc.k() != self.base.k() => Err(Error::Config(format!(
                "encoder emits K={} but the base model expects K={}",
                enc.k(),
                self.base.k()
            ))),
            _ => Ok(()),
        }
    }

    /// Loss of `(x, y)`; when `grads` is set the gradients are accumulated
    /// into the base model and, if `train_encoder`, the encoder.
    fn loss(&mut self, x: &ValueGrid, y: &ValueGrid, grads: bool, train_encoder: bool) -> Result<f64> {
        let mut tape = Tape::new();
        let base_vars = self.base.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let (features, enc_vars) = match &self.encoder {
            Some(enc) => {
                let vars = enc.bind(&mut tape);
                let (aligned, _) = enc_on_tape(&mut tape, input, &vars, enc.instances())?;
                (aligned, Some(vars))
            }
            None => (input, None),
        };
        let probs = predict_on_tape(&mut tape, features, &base_vars, self.base.k())?;
        let loss = tape.cross_entropy(probs, y)?;
        let value = tape.value(loss).get(0, 0);
        if grads {
            let g = tape.backward(loss)?;
            self.base.store_mut().accumulate(&g, &base_vars);
            if let (true, Some(enc), Some(vars)) = (train_encoder, self.encoder.as_mut(), enc_vars) {
                enc.store_mut().accumulate(&g, &vars);
            }
        }
        Ok(value)
    }

    /// Class probabilities for a presented block.
    pub fn predict(&self, x: &ValueGrid) -> Result<ValueGrid> {
        let mut tape = Tape::new();
        let base_vars = self.base.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let features = match &self.encoder {
            Some(enc) => {
                let vars = enc.bind(&mut tape);
                enc_on_tape(&mut tape, input, &vars, enc.instances())?.0
            }
            None => input,
        };
        let probs = predict_on_tape(&mut tape, features, &base_vars, self.base.k())?;
        Ok(tape.value(probs).clone())
    }

    /// `(loss, accuracy)` on the task's test block.
    pub fn score(&self, task: &Task) -> Result<(f64, f64)> {
        let probs = self.predict(&task.x_test)?;
        let loss = crate::autodiff::cross_entropy(&probs, &task.y_test)?;
        Ok((loss, accuracy(&probs, &task.y_test)))
    }

    pub fn num_scalars(&self) -> usize {
        self.base.store().num_scalars() + self.encoder.as_ref().map_or(0, |e| e.store().num_scalars())
    }
}

struct InnerOptimizers {
    base: Option<AdamState>,
    encoder: Option<AdamState>,
}

/// Takes `steps` optimizer steps on the (already presented) task's train
/// block, starting from a copy of `init`. Adam state is fresh per call.
pub fn inner_adapt(
    init: &CombinedInit,
    task: &Task,
    variant: Variant,
    steps: usize,
    lr: f64,
    optimizer: InnerOptimizer,
) -> Result<CombinedInit> {
    let mut model = init.clone();
    let train_encoder = variant.encoder_trainable();
    let mut opt = match optimizer {
        InnerOptimizer::Adam => InnerOptimizers {
            base: Some(AdamState::new(model.base.store())),
            encoder: model.encoder.as_ref().map(|e| AdamState::new(e.store())),
        },
        InnerOptimizer::Sgd => InnerOptimizers {
            base: None,
            encoder: None,
        },
    };
    for step in 0..steps {
        model.base.store_mut().zero_grads();
        if let Some(enc) = model.encoder.as_mut() {
            enc.store_mut().zero_grads();
        }
        let loss = model.loss(&task.x_train, &task.y_train, true, train_encoder)?;
        if !loss.is_finite() || !model.base.store().grads_finite() {
            return Err(Error::Training {
                step,
                reason: format!("inner loss became {loss}"),
                trace: Vec::new(),
            });
        }
        match opt.base.as_mut() {
            Some(adam) => adam.step(model.base.store_mut(), lr),
            None => sgd_step(model.base.store_mut(), lr),
        }
        if train_encoder {
            if let Some(enc) = model.encoder.as_mut() {
                match opt.encoder.as_mut() {
                    Some(adam) => adam.step(enc.store_mut(), lr),
                    None => sgd_step(enc.store_mut(), lr),
                }
            }
        }
    }
    Ok(model)
}

/// Sum of `adapted - init` over tasks, per component.
struct DeltaSum {
    base: ParamStore,
    encoder: Option<ParamStore>,
}

/// One Reptile update: `theta += meta_lr * mean_i(theta'_i - theta)`.
/// Tasks are presented per variant here. Returns the mean test-block loss
/// of the adapted models.
pub fn reptile_meta_step(init: &mut CombinedInit, tasks: &[Task], variant: Variant, cfg: &MetaConfig) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Input("empty meta-batch".into()));
    }
    let adapted: Vec<(CombinedInit, f64)> = tasks
        .par_iter()
        .map(|task| {
            let presented = variant.present(task)?;
            let model = inner_adapt(init, &presented, variant, cfg.inner_steps, cfg.inner_lr, cfg.inner_optimizer)?;
            let (loss, _) = model.score(&presented)?;
            Ok((model, loss))
        })
        .collect::<Result<_>>()?;

    let mut sum = DeltaSum {
        base: zeros_like(init.base.store()),
        encoder: init.encoder.as_ref().map(|e| zeros_like(e.store())),
    };
    let mut loss = 0.0;
    for (model, l) in &adapted {
        sum.base.add_scaled(&model.base.store().difference(init.base.store())?, 1.0)?;
        if let (Some(acc), Some(new), Some(old)) = (sum.encoder.as_mut(), &model.encoder, &init.encoder) {
            acc.add_scaled(&new.store().difference(old.store())?, 1.0)?;
        }
        loss += l;
    }
    let scale = cfg.meta_lr / tasks.len() as f64;
    init.base.store_mut().add_scaled(&sum.base, scale)?;
    if variant.encoder_trainable() {
        if let (Some(enc), Some(delta)) = (init.encoder.as_mut(), &sum.encoder) {
            enc.store_mut().add_scaled(delta, scale)?;
        }
    }
    Ok(loss / tasks.len() as f64)
}

fn zeros_like(store: &ParamStore) -> ParamStore {
    ParamStore::from_named(
        store
            .names()
            .iter()
            .cloned()
            .zip(store.values().iter().map(|v| ValueGrid::zeros(v.rows(), v.cols()))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub meta_epoch: usize,
    /// Mean post-adaptation test-block loss over the window.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome {
    pub init: CombinedInit,
    pub trace: Vec<TracePoint>,
}

/// Runs `cfg.meta_epochs` Reptile updates on freshly sampled training
/// tasks. Every variant of a seed sees the same task sequence.
pub fn meta_train(
    variant: Variant,
    mut init: CombinedInit,
    table: &DatasetTable,
    split: &SplitSpec,
    sampler: &SamplerConfig,
    cfg: &MetaConfig,
) -> Result<MetaTrainOutcome> {
    cfg.validate()?;
    init.check_variant(variant)?;
    if !variant.meta_trains() {
        return Ok(MetaTrainOutcome {
            init,
            trace: Vec::new(),
        });
    }
    let mut rng = rng::stream(cfg.seed, &[streams::META]);
    let mut trace = Vec::new();
    let mut window = 0.0;
    let mut in_window = 0usize;
    for epoch in 0..cfg.meta_epochs {
        let tasks = (0..cfg.meta_batch)
            .map(|_| sample_train_task(table, split, sampler, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let loss = reptile_meta_step(&mut init, &tasks, variant, cfg).map_err(|e| match e {
            Error::Training { step, reason, .. } => Error::Training {
                step,
                reason: format!("meta-epoch {epoch}: {reason}"),
                trace: trace.iter().map(|p: &TracePoint| p.loss).collect(),
            },
            other => other,
        })?;
        window += loss;
        in_window += 1;
        if in_window == cfg.trace_every || epoch + 1 == cfg.meta_epochs {
            trace.push(TracePoint {
                meta_epoch: epoch + 1,
                loss: window / in_window as f64,
            });
            log::debug!("{variant} meta-epoch {}: loss {:.4}", epoch + 1, window / in_window as f64);
            window = 0.0;
            in_window = 0;
        }
    }
    Ok(MetaTrainOutcome { init, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_task: Vec<TaskScore>,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Adapts to each task's train block with `cfg.eval_steps` steps and
/// scores the test block.
pub fn evaluate(init: &CombinedInit, tasks: &[Task], variant: Variant, cfg: &MetaConfig) -> Result<EvalResult> {
    init.check_variant(variant)?;
    let per_task: Vec<TaskScore> = tasks
        .par_iter()
        .map(|task| {
            let presented = variant.present(task)?;
            let model = inner_adapt(init, &presented, variant, cfg.eval_steps, cfg.inner_lr, cfg.inner_optimizer)?;
            let (loss, accuracy) = model.score(&presented)?;
            Ok(TaskScore { loss, accuracy })
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = per_task.iter().map(|s| s.loss).collect();
    let accs: Vec<f64> = per_task.iter().map(|s| s.accuracy).collect();
    let (mean_loss, std_loss) = crate::stats::mean_std(&losses);
    let (mean_accuracy, std_accuracy) = crate::stats::mean_std(&accs);
    Ok(EvalResult {
        per_task,
        mean_loss,
        std_loss,
        mean_accuracy,
        std_accuracy,
    })
}

/// Test-block loss after `0..=steps` adaptation steps. Each point re-adapts
/// from `init`, so point `k` is exactly what `evaluate` sees with `k` steps.
pub fn adaptation_curve(
    init: &CombinedInit,
    task: &Task,
    variant: Variant,
    steps: usize,
    cfg: &MetaConfig,
) -> Result<Vec<f64>> {
    let presented = variant.present(task)?;
    (0..=steps)
        .map(|k| {
            inner_adapt(init, &presented, variant, k, cfg.inner_lr, cfg.inner_optimizer)?
                .score(&presented)
                .map(|(loss, _)| loss)
        })
        .collect()
}
