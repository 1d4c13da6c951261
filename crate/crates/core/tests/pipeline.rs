use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chameleon_core::experiment::{Experiment, ExperimentConfig, Preset, Stage};
use chameleon_core::meta::{evaluate, CombinedInit, Variant};
use chameleon_core::sampler::EvalCache;
use chameleon_core::{synthetic, Error};

fn small_config(dir: &Path, variants: &[Variant]) -> ExperimentConfig {
    let data = dir.join("toy.csv");
    if !data.exists() {
        synthetic::alignment_sensitive(120, 4, 0.1, 0.1, 3).write_csv(&data).unwrap();
    }
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.dataset = data;
    cfg.variants = variants.to_vec();
    cfg.seeds = vec![1, 2];
    cfg.out = dir.join("out");
    cfg.eval_tasks = 12;
    cfg.heatmap_tasks = 50;
    cfg.meta.meta_epochs = 6;
    cfg.meta.meta_batch = 4;
    cfg.meta.trace_every = 2;
    cfg.pretrain.epochs = 60;
    cfg
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &Variant::ALL);
    let a = Experiment::new(cfg.clone()).unwrap().cmd_run();
    assert!(a.failures.is_empty(), "{:?}", a.failures);
    cfg.out = dir.path().join("again");
    let b = Experiment::new(cfg).unwrap().cmd_run();
    assert!(b.failures.is_empty());
    let (ta, tb) = (tree(&dir.path().join("out")), tree(&dir.path().join("again")));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs", k.display());
    }
    let summary = a.summary.unwrap();
    assert_eq!(summary.reports.len(), 6);
    assert!(summary.reports.iter().all(|r| r.seed_count == 2 && r.accuracy_std >= 0.0));
    let sig = summary.accuracy.unwrap();
    assert_eq!(sig.blocks, 24);
    assert_eq!(sig.pairs.len(), 15);
}

#[test]
fn variants_share_one_evaluation_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[Variant::Random, Variant::Oracle]);
    let exp = Experiment::new(cfg).unwrap();
    assert!(exp.cmd_run().failures.is_empty());
    let path = exp.seed_dir(1).join("eval_tasks.txt");
    let cache = EvalCache::read(&path).unwrap();
    assert_eq!(cache.draws.len(), 12);
    // reading the cache back yields the same tasks a fresh sample would
    let before = std::fs::read(&path).unwrap();
    let tasks = exp.eval_tasks(1).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), before);
    assert_eq!(tasks, cache.tasks(&exp.table).unwrap());
}

#[test]
fn random_evaluation_reproduces_untrained_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[Variant::Random]);
    let exp = Experiment::new(cfg).unwrap();
    exp.cmd_metatrain().unwrap();
    let summary = exp.cmd_eval().unwrap();
    let init = CombinedInit::for_variant(Variant::Random, 20, 4, 2, 1, None).unwrap();
    let direct = evaluate(&init, &exp.eval_tasks(1).unwrap(), Variant::Random, &exp.cfg.meta).unwrap();
    assert_eq!(summary.reports[0].seeds[0].mean_accuracy, direct.mean_accuracy);
}

#[test]
fn stages_name_missing_upstream_files() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small_config(dir.path(), &[Variant::Full])).unwrap();
    match exp.stage_metatrain(1, Variant::Full) {
        Err(Error::MissingArtifact { path, .. }) => assert!(path.ends_with("pretrain/checkpoint.json")),
        other => panic!("{other:?}"),
    }
    match exp.stage_eval(1, Variant::Full) {
        Err(Error::MissingArtifact { path, .. }) => assert!(path.ends_with("full/checkpoint.json")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(exp.stage_heatmap(1), Err(Error::MissingArtifact { .. })));
}

#[test]
fn pretrain_trace_and_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &[Variant::Full]);
    cfg.pretrain.epochs = 300;
    let exp = Experiment::new(cfg).unwrap();
    exp.cmd_pretrain().unwrap();
    let trace = std::fs::read_to_string(exp.pretrain_dir(1).join("trace.csv")).unwrap();
    let losses: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 300);
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.last().unwrap() < &losses[0]);
    for h in exp.cmd_heatmap().unwrap() {
        assert_eq!(h.grid.shape(), (4, 4));
        for s in h.grid.row_sums() {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn failing_variant_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &[Variant::Random, Variant::Full, Variant::YhatPad]);
    cfg.pretrain.lr = 1e300;
    let out = Experiment::new(cfg).unwrap().cmd_run();
    assert_eq!(out.failures.len(), 2);
    assert!(out.failures.iter().all(|f| f.stage == Stage::Pretrain && matches!(f.error, Error::Training { .. })));
    let names: Vec<_> = out.summary.unwrap().reports.iter().map(|r| r.variant.clone()).collect();
    assert_eq!(names, ["random", "yhat"]);
}
