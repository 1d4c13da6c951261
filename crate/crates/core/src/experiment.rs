//! End-to-end experiment pipeline: split, pretrain, meta-train, evaluate,
//! report.
//!
//! Artifacts live under `<out>/<dataset>/<mode>/<seed>/`:
//!
//! ```text
//! eval_tasks.txt          shared evaluation cache
//! pretrain/               checkpoint.json trace.csv manifest.json heatmap.csv
//! <variant>/              checkpoint.json trace.csv manifest.json report.json
//! ```
//!
//! and the cross-seed summary under `<out>/<dataset>/<mode>/`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::data::{load_table, DatasetTable};
use crate::encoder::{heatmap, EncoderParams, Heatmap};
use crate::error::{Error, Result};
use crate::meta::{evaluate, meta_train, CombinedInit, EvalResult, MetaConfig, TaskScore, Variant};
use crate::reorder::{reorder_train, ReorderTrainConfig};
use crate::rng::{self, streams};
use crate::sampler::{make_split, EvalCache, Mode, SamplerConfig, SplitSpec, Task};
use crate::stats::{self, RunReport, SeedResult, SignificanceTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Shortened schedule for CI and acceptance runs.
    #[default]
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub mode: Mode,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub preset: Preset,
    pub out: PathBuf,
    /// Reuse and persist the evaluation cache file.
    pub cache: bool,
    pub eval_tasks: usize,
    pub heatmap_tasks: usize,
    pub meta: MetaConfig,
    pub pretrain: ReorderTrainConfig,
    pub sampler: SamplerConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self {
            dataset: PathBuf::new(),
            mode: Mode::NoSplit,
            variants: Variant::ALL.to_vec(),
            seeds: (1..=5).collect(),
            preset,
            out: PathBuf::from("runs"),
            cache: true,
            eval_tasks: 1600,
            heatmap_tasks: 500,
            meta: MetaConfig::default(),
            pretrain: ReorderTrainConfig::default(),
            sampler: SamplerConfig::default(),
        };
        if preset == Preset::Desk {
            cfg.meta.meta_epochs = 2000;
            cfg.pretrain.epochs = 1000;
            cfg.eval_tasks = 200;
            // The shortened schedules need larger steps to move at all.
            cfg.meta.meta_lr = 0.1;
            cfg.pretrain.lr = 3e-3;
        }
        cfg
    }

    /// Defaults of the preset, then the file, then the flags.
    pub fn resolve(file: ConfigOverrides, flags: ConfigOverrides) -> Result<Self> {
        let preset = flags.preset.or(file.preset).unwrap_or_default();
        let mut cfg = Self::preset(preset);
        file.apply(&mut cfg);
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("no dataset given".into()));
        }
        if !self.dataset.is_file() {
            return Err(Error::Config(format!("dataset {} does not exist", self.dataset.display())));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        let mut vs = self.variants.clone();
        vs.sort_unstable();
        vs.dedup();
        if vs.len() != self.variants.len() {
            return Err(Error::Config("variants must be distinct".into()));
        }
        if self.eval_tasks == 0 {
            return Err(Error::Config("eval_tasks must be at least 1".into()));
        }
        if self.sampler.shots_train == 0 || self.sampler.shots_test == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        self.meta.validate()?;
        self.pretrain.validate()
    }

    pub fn dataset_name(&self) -> String {
        self.dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    /// Protocol constants as a flat map, for manifests and deviation checks.
    pub fn protocol(&self) -> BTreeMap<&'static str, Value> {
        BTreeMap::from([
            ("inner_lr", json!(self.meta.inner_lr)),
            ("meta_lr", json!(self.meta.meta_lr)),
            ("inner_steps", json!(self.meta.inner_steps)),
            ("meta_batch", json!(self.meta.meta_batch)),
            ("meta_epochs", json!(self.meta.meta_epochs)),
            ("eval_steps", json!(self.meta.eval_steps)),
            ("inner_optimizer", json!(self.meta.inner_optimizer)),
            ("pretrain_epochs", json!(self.pretrain.epochs)),
            ("pretrain_lr", json!(self.pretrain.lr)),
            ("tasks_per_epoch", json!(self.pretrain.tasks_per_epoch)),
            ("shots_train", json!(self.sampler.shots_train)),
            ("shots_test", json!(self.sampler.shots_test)),
            ("eval_tasks", json!(self.eval_tasks)),
            ("seed_count", json!(self.seeds.len())),
        ])
    }

    /// Protocol constants that differ from the full-protocol defaults.
    pub fn deviations(&self) -> Vec<String> {
        let paper = Self::preset(Preset::Paper).protocol();
        self.protocol()
            .into_iter()
            .filter(|(k, v)| paper.get(k) != Some(v))
            .map(|(k, v)| format!("{k}={v} (full protocol: {})", paper[k]))
            .collect()
    }
}

/// Optional settings from a config file or command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub dataset: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub variants: Option<Vec<Variant>>,
    pub seeds: Option<Vec<u64>>,
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
    pub cache: Option<bool>,
    pub eval_tasks: Option<usize>,
    pub heatmap_tasks: Option<usize>,
    pub inner_lr: Option<f64>,
    pub meta_lr: Option<f64>,
    pub inner_steps: Option<usize>,
    pub meta_batch: Option<usize>,
    pub meta_epochs: Option<usize>,
    pub eval_steps: Option<usize>,
    pub inner_optimizer: Option<crate::meta::InnerOptimizer>,
    pub trace_every: Option<usize>,
    pub pretrain_epochs: Option<usize>,
    pub pretrain_lr: Option<f64>,
    pub tasks_per_epoch: Option<usize>,
    pub shots_train: Option<usize>,
    pub shots_test: Option<usize>,
}

impl ConfigOverrides {
    fn apply(self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$($target).+ = v; })*
            };
        }
        set!(
            dataset => dataset,
            mode => mode,
            variants => variants,
            seeds => seeds,
            preset => preset,
            out => out,
            cache => cache,
            eval_tasks => eval_tasks,
            heatmap_tasks => heatmap_tasks,
            inner_lr => meta.inner_lr,
            meta_lr => meta.meta_lr,
            inner_steps => meta.inner_steps,
            meta_batch => meta.meta_batch,
            meta_epochs => meta.meta_epochs,
            eval_steps => meta.eval_steps,
            inner_optimizer => meta.inner_optimizer,
            trace_every => meta.trace_every,
            pretrain_epochs => pretrain.epochs,
            pretrain_lr => pretrain.lr,
            tasks_per_epoch => pretrain.tasks_per_epoch,
            shots_train => sampler.shots_train,
            shots_test => sampler.shots_test,
        );
    }
}

/// Loaded dataset plus resolved configuration.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub table: DatasetTable,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Metatrain,
    Eval,
    Heatmap,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Metatrain => "metatrain",
            Stage::Eval => "eval",
            Stage::Heatmap => "heatmap",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug)]
pub struct StageFailure {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.stage)?;
        if let Some(s) = self.seed {
            write!(f, " seed {s}")?;
        }
        if let Some(v) = self.variant {
            write!(f, " {v}")?;
        }
        write!(f, ": {}", self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedVariantReport {
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    pub variant: Variant,
    pub eval_steps: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_task: Vec<TaskScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub reports: Vec<RunReport>,
    pub accuracy: Option<SignificanceTable>,
    pub loss: Option<SignificanceTable>,
    pub notes: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Option<Summary>,
    pub failures: Vec<StageFailure>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            reason: format!("{what} not found"),
        },
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let table = load_table(&cfg.dataset)?;
        let name = cfg.dataset_name();
        Ok(Self { cfg, table, name })
    }

    /// Wraps an in-memory table; `cfg.dataset` is only used for naming.
    pub fn with_table(cfg: ExperimentConfig, table: DatasetTable) -> Result<Self> {
        let name = cfg.dataset_name();
        Ok(Self { cfg, table, name })
    }

    pub fn summary_dir(&self) -> PathBuf {
        self.cfg.out.join(&self.name).join(self.cfg.mode.as_str())
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.summary_dir().join(seed.to_string())
    }

    pub fn pretrain_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("pretrain")
    }

    pub fn variant_dir(&self, seed: u64, variant: Variant) -> PathBuf {
        self.seed_dir(seed).join(variant.as_str())
    }

    fn split(&self, seed: u64) -> Result<SplitSpec> {
        make_split(&self.table, self.cfg.mode, seed)
    }

    fn instances(&self) -> usize {
        self.cfg.sampler.shots_train * self.table.num_classes()
    }

    /// Merges a stage entry into the directory's manifest.
    fn record(&self, dir: &Path, stage: Stage, seed: u64, variant: Option<Variant>, extra: Value) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut manifest: BTreeMap<String, Value> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Artifact {
                path: path.clone(),
                reason: e.to_string(),
            })?,
            Err(_) => BTreeMap::new(),
        };
        let mut entry = json!({
            "dataset": self.name,
            "mode": self.cfg.mode,
            "seed": seed,
            "variant": variant.map(Variant::as_str),
            "preset": self.cfg.preset,
            "protocol": self.cfg.protocol(),
            "deviations": self.cfg.deviations(),
        });
        if let (Value::Object(e), Value::Object(x)) = (&mut entry, extra) {
            e.extend(x);
        }
        manifest.insert(stage.to_string(), entry);
        write_json(&path, &manifest)
    }

    pub fn stage_pretrain(&self, seed: u64) -> Result<EncoderParams> {
        let split = self.split(seed)?;
        let encoder = EncoderParams::glorot(
            self.instances(),
            self.table.num_features(),
            &mut rng::stream(seed, &[streams::ENCODER_INIT]),
        );
        let cfg = ReorderTrainConfig { seed, ..self.cfg.pretrain };
        log::info!("{} seed {seed}: pretraining encoder for {} epochs", self.name, cfg.epochs);
        let out = reorder_train(encoder, &self.table, &split, &self.cfg.sampler, &cfg)?;
        let dir = self.pretrain_dir(seed);
        Checkpoint::from_encoder(&out.encoder, seed, cfg.epochs, serde_json::to_value(cfg)?).save(&dir.join("checkpoint.json"))?;
        let mut trace = String::from("epoch,loss\n");
        for (i, l) in out.trace.iter().enumerate() {
            trace.push_str(&format!("{},{l}\n", i + 1));
        }
        write_atomic(&dir.join("trace.csv"), trace.as_bytes())?;
        self.record(
            &dir,
            Stage::Pretrain,
            seed,
            None,
            json!({"outputs": ["checkpoint.json", "trace.csv"], "final_loss": out.trace.last()}),
        )?;
        Ok(out.encoder)
    }

    fn load_pretrained(&self, seed: u64) -> Result<EncoderParams> {
        let path = self.pretrain_dir(seed).join("checkpoint.json");
        Checkpoint::load(&path)?.encoder()?.ok_or_else(|| Error::Artifact {
            path,
            reason: "checkpoint holds no encoder".into(),
        })
    }

    pub fn stage_metatrain(&self, seed: u64, variant: Variant) -> Result<CombinedInit> {
        let pretrained = if variant.needs_pretrained_encoder() {
            Some(self.load_pretrained(seed)?)
        } else {
            None
        };
        let split = self.split(seed)?;
        let init = CombinedInit::for_variant(
            variant,
            self.instances(),
            self.table.num_features(),
            self.table.num_classes(),
            seed,
            pretrained.as_ref(),
        )?;
        let cfg = MetaConfig { seed, ..self.cfg.meta };
        let epochs = if variant.meta_trains() { cfg.meta_epochs } else { 0 };
        log::info!("{} seed {seed}: meta-training {variant} for {epochs} meta-epochs", self.name);
        let out = meta_train(variant, init, &self.table, &split, &self.cfg.sampler, &cfg)?;
        let dir = self.variant_dir(seed, variant);
        Checkpoint::from_init(&out.init, variant, seed, epochs, serde_json::to_value(cfg)?).save(&dir.join("checkpoint.json"))?;
        let mut trace = String::from("meta_epoch,loss\n");
        for p in &out.trace {
            trace.push_str(&format!("{},{}\n", p.meta_epoch, p.loss));
        }
        write_atomic(&dir.join("trace.csv"), trace.as_bytes())?;
        let inputs: Vec<&str> = if variant.needs_pretrained_encoder() {
            vec!["../pretrain/checkpoint.json"]
        } else {
            vec![]
        };
        self.record(
            &dir,
            Stage::Metatrain,
            seed,
            Some(variant),
            json!({"inputs": inputs, "outputs": ["checkpoint.json", "trace.csv"]}),
        )?;
        Ok(out.init)
    }

    /// The seed's evaluation tasks, read from the cache when allowed and
    /// valid, otherwise sampled (and written when caching is on).
    pub fn eval_tasks(&self, seed: u64) -> Result<Vec<Task>> {
        let path = self.seed_dir(seed).join("eval_tasks.txt");
        if self.cfg.cache && path.is_file() {
            match EvalCache::read(&path) {
                Ok(c)
                    if c.dataset == self.table.name
                        && c.mode == self.cfg.mode
                        && c.seed == seed
                        && c.draws.len() == self.cfg.eval_tasks =>
                {
                    if let Ok(tasks) = c.tasks(&self.table) {
                        return Ok(tasks);
                    }
                }
                _ => log::warn!("{} does not match this run; resampling", path.display()),
            }
        }
        let split = self.split(seed)?;
        let cache = EvalCache::sample(
            &self.table,
            &split,
            &self.cfg.sampler,
            self.cfg.eval_tasks,
            &mut rng::stream(seed, &[streams::EVAL_TASKS]),
        )?;
        if self.cfg.cache {
            cache.write(&path)?;
        }
        cache.tasks(&self.table)
    }

    pub fn stage_eval(&self, seed: u64, variant: Variant) -> Result<SeedVariantReport> {
        let dir = self.variant_dir(seed, variant);
        let init = Checkpoint::load(&dir.join("checkpoint.json"))?.init()?;
        let tasks = self.eval_tasks(seed)?;
        log::info!("{} seed {seed}: evaluating {variant} on {} tasks", self.name, tasks.len());
        let r: EvalResult = evaluate(&init, &tasks, variant, &self.cfg.meta)?;
        let report = SeedVariantReport {
            dataset: self.name.clone(),
            mode: self.cfg.mode,
            seed,
            variant,
            eval_steps: self.cfg.meta.eval_steps,
            mean_loss: r.mean_loss,
            std_loss: r.std_loss,
            mean_accuracy: r.mean_accuracy,
            std_accuracy: r.std_accuracy,
            per_task: r.per_task,
        };
        write_json(&dir.join("report.json"), &report)?;
        self.record(
            &dir,
            Stage::Eval,
            seed,
            Some(variant),
            json!({"inputs": ["checkpoint.json", "../eval_tasks.txt"], "outputs": ["report.json"]}),
        )?;
        Ok(report)
    }

    pub fn stage_heatmap(&self, seed: u64) -> Result<Heatmap> {
        let encoder = self.load_pretrained(seed)?;
        let split = self.split(seed)?;
        let h = heatmap(
            &self.table,
            &split,
            &encoder,
            &self.cfg.sampler,
            self.cfg.heatmap_tasks,
            &mut rng::stream(seed, &[streams::HEATMAP]),
        )?;
        let dir = self.pretrain_dir(seed);
        let k = h.grid.cols();
        let mut csv = String::from("feature,count");
        for c in 0..k {
            csv.push_str(&format!(",pos{c}"));
        }
        csv.push('\n');
        for (c, n) in h.counts.iter().enumerate() {
            csv.push_str(&format!("{c},{n}"));
            for v in h.grid.row(c) {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        write_atomic(&dir.join("heatmap.csv"), csv.as_bytes())?;
        self.record(
            &dir,
            Stage::Heatmap,
            seed,
            None,
            json!({"inputs": ["checkpoint.json"], "outputs": ["heatmap.csv"], "diagonal_mass": h.diagonal_mass()}),
        )?;
        Ok(h)
    }

    /// Aggregates every available `(seed, variant)` report and runs the
    /// significance tests over `(seed, task)` blocks.
    pub fn summarize(&self) -> Result<Summary> {
        let mut reports = Vec::new();
        let mut notes = Vec::new();
        let mut complete: Vec<(Variant, Vec<SeedVariantReport>)> = Vec::new();
        for &variant in &self.cfg.variants {
            let mut per_seed = Vec::new();
            for &seed in &self.cfg.seeds {
                let path = self.variant_dir(seed, variant).join("report.json");
                match read_json::<SeedVariantReport>(&path, "evaluation report") {
                    Ok(r) => per_seed.push(r),
                    Err(Error::MissingArtifact { .. }) => notes.push(format!("{variant}: no report for seed {seed}")),
                    Err(e) => return Err(e),
                }
            }
            if per_seed.is_empty() {
                continue;
            }
            let seeds: Vec<SeedResult> = per_seed
                .iter()
                .map(|r| SeedResult {
                    seed: r.seed,
                    mean_loss: r.mean_loss,
                    mean_accuracy: r.mean_accuracy,
                })
                .collect();
            reports.push(stats::aggregate(&self.name, self.cfg.mode.as_str(), variant.as_str(), &seeds)?);
            if per_seed.len() == self.cfg.seeds.len() {
                complete.push((variant, per_seed));
            }
        }
        let (accuracy, loss) = if complete.len() >= 2 {
            let names: Vec<String> = complete.iter().map(|(v, _)| v.to_string()).collect();
            let column = |f: fn(&TaskScore) -> f64| -> Vec<Vec<f64>> {
                complete
                    .iter()
                    .map(|(_, rs)| rs.iter().flat_map(|r| r.per_task.iter().map(f)).collect())
                    .collect()
            };
            (
                Some(stats::significance_table("accuracy", &names, &column(|s| s.accuracy), true, stats::ALPHA)?),
                Some(stats::significance_table("loss", &names, &column(|s| s.loss), false, stats::ALPHA)?),
            )
        } else {
            notes.push("fewer than two variants with complete seeds; no significance tests".into());
            (None, None)
        };
        let summary = Summary {
            reports,
            accuracy,
            loss,
            notes,
        };
        self.write_summary(&summary)?;
        Ok(summary)
    }

    fn write_summary(&self, s: &Summary) -> Result<()> {
        let dir = self.summary_dir();
        write_json(&dir.join("report.json"), s)?;
        let mut csv = String::from("dataset,mode,variant,seeds,loss_mean,loss_std,accuracy_mean,accuracy_std\n");
        for r in &s.reports {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.dataset, r.mode, r.variant, r.seed_count, r.loss_mean, r.loss_std, r.accuracy_mean, r.accuracy_std
            ));
        }
        write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
        let mut sig = String::from("metric,a,b,p_value,threshold,rejected\n");
        for t in [&s.accuracy, &s.loss].into_iter().flatten() {
            for p in &t.pairs {
                let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                sig.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    t.metric,
                    p.a,
                    p.b,
                    fmt_opt(p.p_value),
                    fmt_opt(p.threshold),
                    p.rejected
                ));
            }
        }
        write_atomic(&dir.join("significance.csv"), sig.as_bytes())?;
        let mut ranks = String::from("metric,variant,mean_rank\n");
        for t in [&s.accuracy, &s.loss].into_iter().flatten() {
            for (v, r) in t.variants.iter().zip(&t.mean_ranks) {
                ranks.push_str(&format!("{},{v},{r}\n", t.metric));
            }
        }
        write_atomic(&dir.join("ranks.csv"), ranks.as_bytes())
    }

    fn needs_pretrain(&self) -> bool {
        self.cfg.variants.iter().any(|v| v.needs_pretrained_encoder())
    }

    pub fn cmd_pretrain(&self) -> Result<()> {
        for &seed in &self.cfg.seeds {
            self.stage_pretrain(seed)?;
        }
        Ok(())
    }

    pub fn cmd_metatrain(&self) -> Result<()> {
        for &seed in &self.cfg.seeds {
            for &v in &self.cfg.variants {
                self.stage_metatrain(seed, v)?;
            }
        }
        Ok(())
    }

    pub fn cmd_eval(&self) -> Result<Summary> {
        for &seed in &self.cfg.seeds {
            for &v in &self.cfg.variants {
                self.stage_eval(seed, v)?;
            }
        }
        self.summarize()
    }

    pub fn cmd_heatmap(&self) -> Result<Vec<Heatmap>> {
        self.cfg.seeds.iter().map(|&s| self.stage_heatmap(s)).collect()
    }

    /// Full pipeline. A failing variant is recorded and the rest proceed.
    pub fn cmd_run(&self) -> RunOutcome {
        let mut failures = Vec::new();
        for &seed in &self.cfg.seeds {
            let mut pretrain_ok = true;
            if self.needs_pretrain() {
                if let Err(error) = self.stage_pretrain(seed) {
                    log::error!("{} seed {seed}: pretraining failed: {error}", self.name);
                    failures.push(StageFailure {
                        seed: Some(seed),
                        variant: None,
                        stage: Stage::Pretrain,
                        error,
                    });
                    pretrain_ok = false;
                }
            }
            for &variant in &self.cfg.variants {
                if variant.needs_pretrained_encoder() && !pretrain_ok {
                    continue;
                }
                let result = self
                    .stage_metatrain(seed, variant)
                    .map_err(|e| (Stage::Metatrain, e))
                    .and_then(|_| self.stage_eval(seed, variant).map_err(|e| (Stage::Eval, e)));
                if let Err((stage, error)) = result {
                    log::error!("{} seed {seed}: {variant} failed at {stage}: {error}", self.name);
                    failures.push(StageFailure {
                        seed: Some(seed),
                        variant: Some(variant),
                        stage,
                        error,
                    });
                }
            }
        }
        let summary = match self.summarize() {
            Ok(s) => Some(s),
            Err(error) => {
                failures.push(StageFailure {
                    seed: None,
                    variant: None,
                    stage: Stage::Report,
                    error,
                });
                None
            }
        };
        RunOutcome { summary, failures }
    }
}
