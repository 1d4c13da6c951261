use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chameleon_core::experiment::{ConfigOverrides, Experiment, ExperimentConfig, Preset, Summary};
use chameleon_core::meta::{InnerOptimizer, Variant};
use chameleon_core::sampler::Mode;
use chameleon_core::{synthetic, Error};

#[derive(Parser)]
#[command(name = "chameleon", version, about = "Schema-agnostic meta-learning experiments on tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, meta-train and evaluate every variant, then report.
    Run(RunArgs),
    /// Pretrain the reordering encoder.
    Pretrain(RunArgs),
    /// Meta-train the selected variants (FULL/FROZEN need a pretrain checkpoint).
    Metatrain(RunArgs),
    /// Evaluate meta-trained checkpoints and write the summary reports.
    Eval(RunArgs),
    /// Average reordering rows of the pretrained encoder per canonical feature.
    Heatmap(RunArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// Key-value config file (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Comma-separated, e.g. `random,yhat,full`.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Option<Vec<Variant>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse and persist the per-seed evaluation task cache.
    #[arg(long)]
    cache: Option<bool>,
    #[arg(long)]
    eval_tasks: Option<usize>,
    #[arg(long)]
    heatmap_tasks: Option<usize>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    meta_lr: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    meta_batch: Option<usize>,
    #[arg(long)]
    meta_epochs: Option<usize>,
    #[arg(long)]
    eval_steps: Option<usize>,
    #[arg(long, value_enum)]
    inner_optimizer: Option<OptimizerArg>,
    #[arg(long)]
    trace_every: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    tasks_per_epoch: Option<usize>,
    #[arg(long)]
    shots_train: Option<usize>,
    #[arg(long)]
    shots_test: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Disjoint per-feature value bands; labels carry no signal.
    Separated,
    /// Binary labels whose signal depends on knowing each feature's identity.
    Aligned,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "aligned")]
    kind: SynthKind,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long, default_value_t = 4)]
    features: usize,
    /// Ignored by `aligned`, which is always binary.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    shift: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            dataset: self.dataset.clone(),
            mode: self.mode,
            variants: self.variants.clone(),
            seeds: self.seeds.clone(),
            preset: self.preset,
            out: self.out.clone(),
            cache: self.cache,
            eval_tasks: self.eval_tasks,
            heatmap_tasks: self.heatmap_tasks,
            inner_lr: self.inner_lr,
            meta_lr: self.meta_lr,
            inner_steps: self.inner_steps,
            meta_batch: self.meta_batch,
            meta_epochs: self.meta_epochs,
            eval_steps: self.eval_steps,
            inner_optimizer: self.inner_optimizer.map(|o| match o {
                OptimizerArg::Adam => InnerOptimizer::Adam,
                OptimizerArg::Sgd => InnerOptimizer::Sgd,
            }),
            trace_every: self.trace_every,
            pretrain_epochs: self.pretrain_epochs,
            pretrain_lr: self.pretrain_lr,
            tasks_per_epoch: self.tasks_per_epoch,
            shots_train: self.shots_train,
            shots_test: self.shots_test,
        }
    }

    fn experiment(&self) -> anyhow::Result<Experiment> {
        let file = match &self.config {
            Some(path) => read_config(path)?,
            None => ConfigOverrides::default(),
        };
        let cfg = ExperimentConfig::resolve(file, self.overrides())?;
        for d in cfg.deviations() {
            log::warn!("protocol deviation: {d}");
        }
        Ok(Experiment::new(cfg)?)
    }
}

fn read_config(path: &Path) -> anyhow::Result<ConfigOverrides> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(parsed)
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<10} {:>5} {:>10} {:>8} {:>10} {:>8}",
        "variant", "seeds", "accuracy", "±", "loss", "±"
    );
    for r in &summary.reports {
        println!(
            "{:<10} {:>5} {:>10.4} {:>8.4} {:>10.4} {:>8.4}",
            r.variant, r.seed_count, r.accuracy_mean, r.accuracy_std, r.loss_mean, r.loss_std
        );
    }
    if let Some(t) = &summary.accuracy {
        println!("\nmean accuracy rank over {} blocks:", t.blocks);
        for (v, r) in t.variants.iter().zip(&t.mean_ranks) {
            println!("  {v:<10} {r:.3}");
        }
    }
    for n in &summary.notes {
        println!("note: {n}");
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CHM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("CHM_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            bail!(Error::Config("CHM_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run(args) => {
            let exp = args.experiment()?;
            let outcome = exp.cmd_run();
            if let Some(s) = &outcome.summary {
                print_summary(s);
                println!("\nreports in {}", exp.summary_dir().display());
            }
            if let Some(first) = outcome.failures.into_iter().next() {
                let context = first.to_string();
                return Err(anyhow::Error::new(first.error).context(context));
            }
        }
        Command::Pretrain(args) => {
            let exp = args.experiment()?;
            exp.cmd_pretrain()?;
        }
        Command::Metatrain(args) => {
            let exp = args.experiment()?;
            exp.cmd_metatrain()?;
        }
        Command::Eval(args) => {
            let exp = args.experiment()?;
            print_summary(&exp.cmd_eval()?);
        }
        Command::Heatmap(args) => {
            let exp = args.experiment()?;
            for (seed, h) in exp.cfg.seeds.iter().zip(exp.cmd_heatmap()?) {
                println!("seed {seed}: diagonal mass {:.4}", h.diagonal_mass());
            }
        }
        Command::Synth(a) => {
            let table = match a.kind {
                SynthKind::Separated => synthetic::separated_features(a.per_class, a.features, a.classes, a.seed),
                SynthKind::Aligned => synthetic::alignment_sensitive(a.per_class, a.features, a.noise, a.shift, a.seed),
            };
            table
                .write_csv(&a.output)
                .with_context(|| format!("writing {}", a.output.display()))?;
        }
    }
    Ok(())
}

/// 2 for configuration and dependency problems, 3 for bad data, 4 for
/// training failures, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::MissingArtifact { .. }) => 2,
        Some(
            Error::Load { .. }
            | Error::Sampling(_)
            | Error::Input(_)
            | Error::Dimension { .. }
            | Error::Artifact { .. },
        ) => 3,
        Some(Error::Training { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
