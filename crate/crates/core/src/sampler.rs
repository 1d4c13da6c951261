//! Meta-dataset construction from a single table: instance and feature
//! splits, few-shot task sampling, and the padded / oracle task layouts.
//!
//! Every task has the same shape: `shots x classes` instances per block and
//! `K = F_full` target positions, so a ground-truth reordering exists for
//! every feature of the source table, including test-only ones.

use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetTable;
use crate::error::{Error, Result};
use crate::grid::ValueGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Split,
    NoSplit,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Split => "split",
            Mode::NoSplit => "nosplit",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "split" => Ok(Mode::Split),
            "nosplit" => Ok(Mode::NoSplit),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Fraction of instances used for training; the rest feeds test tasks.
pub const TRAIN_INSTANCE_FRACTION: f64 = 0.75;
/// Features needed before a feature split is allowed.
pub const MIN_FEATURES_FOR_SPLIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub shots_train: usize,
    pub shots_test: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            shots_train: 10,
            shots_test: 10,
        }
    }
}

/// Instance and feature partition of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub mode: Mode,
    pub seed: u64,
    pub train_instances: Vec<usize>,
    pub test_instances: Vec<usize>,
    /// Canonical indices usable by training tasks (ascending).
    pub train_features: Vec<usize>,
    /// Canonical indices reserved for test tasks; empty without a split.
    pub test_features: Vec<usize>,
    num_features: usize,
    train_by_class: Vec<Vec<usize>>,
    test_by_class: Vec<Vec<usize>>,
}

impl SplitSpec {
    pub fn num_features(&self) -> usize {
        self.num_features
    }
}

/// Deterministic per-seed partition: a stratified 75/25 instance split
/// and, in split mode, `ceil(0.2 F)` test-only features.
pub fn make_split(table: &DatasetTable, mode: Mode, seed: u64) -> Result<SplitSpec> {
    let rng = &mut crate::rng::stream(seed, &[crate::rng::streams::SPLIT]);
    let f_full = table.num_features();
    if mode == Mode::Split && f_full < MIN_FEATURES_FOR_SPLIT {
        return Err(Error::Config(format!(
            "split mode needs at least {MIN_FEATURES_FOR_SPLIT} features, {} has {f_full}",
            table.name
        )));
    }

    let mut train_by_class = vec![Vec::new(); table.num_classes()];
    let mut test_by_class = vec![Vec::new(); table.num_classes()];
    for class in 0..table.num_classes() {
        let mut members: Vec<usize> = (0..table.num_instances())
            .filter(|&i| table.labels[i] == class)
            .collect();
        members.shuffle(rng);
        let n_train = (members.len() as f64 * TRAIN_INSTANCE_FRACTION).round() as usize;
        let mut test = members.split_off(n_train);
        members.sort_unstable();
        test.sort_unstable();
        train_by_class[class] = members;
        test_by_class[class] = test;
    }
    let mut train_instances: Vec<usize> = train_by_class.concat();
    let mut test_instances: Vec<usize> = test_by_class.concat();
    train_instances.sort_unstable();
    test_instances.sort_unstable();

    let (train_features, test_features) = match mode {
        Mode::NoSplit => ((0..f_full).collect(), Vec::new()),
        Mode::Split => {
            let n_test = reserved_feature_count(f_full);
            let mut order: Vec<usize> = (0..f_full).collect();
            order.shuffle(rng);
            let mut test = order.split_off(f_full - n_test);
            order.sort_unstable();
            test.sort_unstable();
            (order, test)
        }
    };

    Ok(SplitSpec {
        mode,
        seed,
        train_instances,
        test_instances,
        train_features,
        test_features,
        num_features: f_full,
        train_by_class,
        test_by_class,
    })
}

/// `ceil(0.2 * f)` test-only features.
pub fn reserved_feature_count(f: usize) -> usize {
    f.div_ceil(5)
}

/// Inclusive range `[ceil(0.4 f), floor(0.6 f)]` of features per task.
/// When the range is empty (tiny `f`) the lower bound is used.
pub fn feature_count_bounds(f: usize) -> (usize, usize) {
    let lo = (2 * f).div_ceil(5).max(1).min(f);
    let hi = (3 * f / 5).max(lo).min(f);
    (lo, hi)
}

/// Test-feature quota of a split-mode test task with `m` features:
/// `round(0.2 m)`, at least one.
pub fn test_feature_quota(m: usize) -> usize {
    ((2 * m + 5) / 10).max(1)
}

/// The compact, reproducible description of a sampled task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDraw {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub feature_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub x_train: ValueGrid,
    pub y_train: ValueGrid,
    pub x_test: ValueGrid,
    pub y_test: ValueGrid,
    /// Canonical feature index of each column, in sampled order.
    pub feature_indices: Vec<usize>,
    /// One-hot `F x K` ground truth: row `j` marks `feature_indices[j]`.
    pub pi_true: ValueGrid,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl Task {
    pub fn k(&self) -> usize {
        self.pi_true.cols()
    }

    pub fn num_sampled_features(&self) -> usize {
        self.feature_indices.len()
    }

    pub fn num_classes(&self) -> usize {
        self.y_train.cols()
    }

    pub fn from_draw(table: &DatasetTable, draw: &TaskDraw) -> Result<Task> {
        let k = table.num_features();
        let c = table.num_classes();
        if let Some(&bad) = draw.feature_indices.iter().find(|&&f| f >= k) {
            return Err(Error::Input(format!("feature index {bad} out of range")));
        }
        let n = table.num_instances();
        if let Some(&bad) = draw.train_rows.iter().chain(&draw.test_rows).find(|&&r| r >= n) {
            return Err(Error::Input(format!("instance index {bad} out of range")));
        }
        let block = |rows: &[usize]| table.features.select_rows(rows).select_columns(&draw.feature_indices);
        let one_hot = |rows: &[usize]| {
            let mut y = ValueGrid::zeros(rows.len(), c);
            for (i, &r) in rows.iter().enumerate() {
                y.set(i, table.labels[r], 1.0);
            }
            y
        };
        let mut pi_true = ValueGrid::zeros(draw.feature_indices.len(), k);
        for (j, &f) in draw.feature_indices.iter().enumerate() {
            pi_true.set(j, f, 1.0);
        }
        Ok(Task {
            x_train: block(&draw.train_rows),
            y_train: one_hot(&draw.train_rows),
            x_test: block(&draw.test_rows),
            y_test: one_hot(&draw.test_rows),
            feature_indices: draw.feature_indices.clone(),
            pi_true,
            train_rows: draw.train_rows.clone(),
            test_rows: draw.test_rows.clone(),
        })
    }

    pub fn draw(&self) -> TaskDraw {
        TaskDraw {
            train_rows: self.train_rows.clone(),
            test_rows: self.test_rows.clone(),
            feature_indices: self.feature_indices.clone(),
        }
    }
}

/// Draws `shots_train + shots_test` distinct instances per class, splits
/// them into the two blocks, and shuffles each block's row order.
fn draw_instances<R: Rng + ?Sized>(
    pools: &[Vec<usize>],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let need = cfg.shots_train + cfg.shots_test;
    let mut train = Vec::with_capacity(cfg.shots_train * pools.len());
    let mut test = Vec::with_capacity(cfg.shots_test * pools.len());
    for (class, pool) in pools.iter().enumerate() {
        if pool.len() < need {
            return Err(Error::Sampling(format!(
                "class {class} has {} instances available, {need} needed",
                pool.len()
            )));
        }
        let picked = index::sample(rng, pool.len(), need);
        for (i, p) in picked.iter().enumerate() {
            if i < cfg.shots_train {
                train.push(pool[p]);
            } else {
                test.push(pool[p]);
            }
        }
    }
    train.shuffle(rng);
    test.shuffle(rng);
    Ok((train, test))
}

fn choose<R: Rng + ?Sized>(from: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, from.len(), count)
        .iter()
        .map(|i| from[i])
        .collect()
}

pub fn sample_train_draw<R: Rng + ?Sized>(
    split: &SplitSpec,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TaskDraw> {
    let (lo, hi) = feature_count_bounds(split.train_features.len());
    let m = rng.gen_range(lo..=hi);
    let mut feature_indices = choose(&split.train_features, m, rng);
    feature_indices.shuffle(rng);
    let (train_rows, test_rows) = draw_instances(&split.train_by_class, cfg, rng)?;
    Ok(TaskDraw {
        train_rows,
        test_rows,
        feature_indices,
    })
}

pub fn sample_test_draw<R: Rng + ?Sized>(
    split: &SplitSpec,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TaskDraw> {
    let (lo, hi) = feature_count_bounds(split.train_features.len());
    let m = rng.gen_range(lo..=hi);
    let mut feature_indices = match split.mode {
        Mode::NoSplit => choose(&split.train_features, m, rng),
        Mode::Split => {
            let n_reserved = test_feature_quota(m).min(split.test_features.len());
            let n_seen = (m - n_reserved).min(split.train_features.len());
            let mut f = choose(&split.test_features, n_reserved, rng);
            f.extend(choose(&split.train_features, n_seen, rng));
            f
        }
    };
    feature_indices.shuffle(rng);
    let (train_rows, test_rows) = draw_instances(&split.test_by_class, cfg, rng)?;
    Ok(TaskDraw {
        train_rows,
        test_rows,
        feature_indices,
    })
}

/// A training task: features and instances from the training partition.
pub fn sample_train_task<R: Rng + ?Sized>(
    table: &DatasetTable,
    split: &SplitSpec,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Task> {
    Task::from_draw(table, &sample_train_draw(split, cfg, rng)?)
}

/// A test task: instances from the test partition only; in split mode a
/// fifth of the features come from the reserved set.
pub fn sample_test_task<R: Rng + ?Sized>(
    table: &DatasetTable,
    split: &SplitSpec,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Task> {
    Task::from_draw(table, &sample_test_draw(split, cfg, rng)?)
}

fn pad_block(x: &ValueGrid, k: usize) -> ValueGrid {
    let mut out = ValueGrid::zeros(x.rows(), k);
    for r in 0..x.rows() {
        out.row_mut(r)[..x.cols()].copy_from_slice(x.row(r));
    }
    out
}

/// Right-pads both blocks with zero columns up to `K`, keeping the sampled
/// feature order.
pub fn pad_task(task: &Task) -> Result<Task> {
    let k = task.k();
    let f = task.num_sampled_features();
    if f > k {
        return Err(Error::Contract(format!(
            "cannot pad {f} features into {k} positions"
        )));
    }
    Ok(Task {
        x_train: pad_block(&task.x_train, k),
        x_test: pad_block(&task.x_test, k),
        ..task.clone()
    })
}

fn place_canonical(x: &ValueGrid, features: &[usize], k: usize) -> ValueGrid {
    let mut out = ValueGrid::zeros(x.rows(), k);
    for r in 0..x.rows() {
        for (j, &f) in features.iter().enumerate() {
            out.set(r, f, x.get(r, j));
        }
    }
    out
}

/// Moves every sampled feature to its canonical column; all other columns
/// are zero.
pub fn oracle_task(task: &Task) -> Task {
    let k = task.k();
    Task {
        x_train: place_canonical(&task.x_train, &task.feature_indices, k),
        x_test: place_canonical(&task.x_test, &task.feature_indices, k),
        ..task.clone()
    }
}

/// Pre-sampled evaluation tasks of one `(dataset, mode, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCache {
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    pub draws: Vec<TaskDraw>,
}

const CACHE_MAGIC: &str = "# chameleon eval-task cache v1";

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

impl EvalCache {
    pub fn sample(
        table: &DatasetTable,
        split: &SplitSpec,
        cfg: &SamplerConfig,
        n_tasks: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let draws = (0..n_tasks)
            .map(|_| sample_test_draw(split, cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            dataset: table.name.clone(),
            mode: split.mode,
            seed: split.seed,
            draws,
        })
    }

    pub fn tasks(&self, table: &DatasetTable) -> Result<Vec<Task>> {
        self.draws.iter().map(|d| Task::from_draw(table, d)).collect()
    }

    /// One line per task: `id;train rows;test rows;features`.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{CACHE_MAGIC}\ndataset={}\nmode={}\nseed={}\ntasks={}\n",
            self.dataset,
            self.mode,
            self.seed,
            self.draws.len()
        );
        for (i, d) in self.draws.iter().enumerate() {
            s.push_str(&format!(
                "{i};{};{};{}\n",
                join(&d.train_rows),
                join(&d.test_rows),
                join(&d.feature_indices)
            ));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::checkpoint::write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |reason: String| Error::Artifact {
            path: path.to_path_buf(),
            reason,
        };
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("truncated header".into()))?
                .map_err(Error::from)
        };
        if next()? != CACHE_MAGIC {
            return Err(bad("missing cache header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next()?;
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected {key}=, found {line:?}")))
        };
        let dataset = field("dataset")?;
        let mode: Mode = field("mode")?.parse()?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let n: usize = field("tasks")?.parse().map_err(|_| bad("bad task count".into()))?;
        let mut draws = Vec::with_capacity(n);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(';').collect();
            if parts.len() != 4 {
                return Err(bad(format!("malformed task line {line:?}")));
            }
            let parse = |s| parse_list(s).map_err(|_| bad(format!("bad index list in {line:?}")));
            draws.push(TaskDraw {
                train_rows: parse(parts[1])?,
                test_rows: parse(parts[2])?,
                feature_indices: parse(parts[3])?,
            });
        }
        if draws.len() != n {
            return Err(bad(format!("header says {n} tasks, found {}", draws.len())));
        }
        Ok(Self {
            dataset,
            mode,
            seed,
            draws,
        })
    }
}
