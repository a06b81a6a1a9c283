//! File-based workflows behind the command-line subcommands: cohort archives in,
//! run directories and results directories out.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::load_checkpoint;
use crate::cohort::{generate_cohort, Cohort, CohortConfig, Group, Split, Subject};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::experiment::{run_anomaly, run_protocol, summary_csv, AnomalyReport, CopyReference, Protocol, ProtocolResult, ResultsDir};
use crate::hierarchy::MeshHierarchy;
use crate::model::{Model, ModelConfig};
use crate::training::{train_with, EpochLog, RunDir, TrainConfig, TrainReport};

pub const HIERARCHY_CACHE: &str = "hierarchy.cache";
const TRAIN_SUBJECTS: &str = "train_subjects";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn generate(out: &Path, kv: &KeyValues) -> Result<Cohort> {
    kv.reject_unknown(CohortConfig::KEYS)?;
    let cohort = generate_cohort(&CohortConfig::default().with_overrides(kv)?)?;
    cohort.save(out)?;
    Ok(cohort)
}

/// Loads `{cohort}/hierarchy.cache`, rebuilding it when absent, stale or requested.
pub fn hierarchy(cohort_dir: &Path, cohort: &Cohort, model: &ModelConfig, rebuild: bool) -> Result<MeshHierarchy> {
    MeshHierarchy::load_or_build(&cohort_dir.join(HIERARCHY_CACHE), &cohort.template, &model.hierarchy, rebuild)
}

/// Keys accepted by `train`: the model preset, model and optimization keys, and
/// `normals_only` (train on normal subjects only, as anomaly detection requires).
pub fn train_keys() -> Vec<&'static str> {
    let mut keys = vec!["preset", "normals_only"];
    keys.extend_from_slice(ModelConfig::KEYS);
    keys.extend_from_slice(TrainConfig::KEYS);
    keys
}

pub fn model_config(kv: &KeyValues) -> Result<ModelConfig> {
    let preset: String = kv.get("preset", "ttm".to_string())?;
    ModelConfig::desk(&preset)?.with_overrides(kv)
}

fn selected<'a>(cohort: &'a Cohort, split: Split, normals_only: bool) -> Vec<&'a Subject> {
    cohort
        .split(split)
        .into_iter()
        .filter(|s| !normals_only || s.spec.group == Group::Normal)
        .collect()
}

pub fn train(
    cohort_dir: &Path,
    run_dir: &Path,
    kv: &KeyValues,
    rebuild_hierarchy: bool,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainReport> {
    kv.reject_unknown(&train_keys())?;
    let cohort = Cohort::load(cohort_dir)?;
    let model_cfg = model_config(kv)?;
    let train_cfg = TrainConfig::default().with_overrides(kv)?;
    let normals_only: bool = kv.get("normals_only", false)?;
    let h = hierarchy(cohort_dir, &cohort, &model_cfg, rebuild_hierarchy)?;
    let model = Model::new(&model_cfg, &h)?;

    let train_subjects = selected(&cohort, Split::Train, normals_only);
    let val_subjects = selected(&cohort, Split::Val, normals_only);
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut echo = model_cfg.to_key_values();
    for (k, v) in train_cfg.to_key_values().entries() {
        echo.set(k, v);
    }
    echo.set("preset", kv.get("preset", "ttm".to_string())?);
    echo.set("normals_only", normals_only);
    write(&run_dir.join("config.echo"), &echo.to_text())?;
    let ids: String = train_subjects.iter().map(|s| format!("{}\n", s.id())).collect();
    write(&run_dir.join(TRAIN_SUBJECTS), &ids)?;
    let results = ResultsDir::create(run_dir)?;
    results.write_manifest(&[cohort_dir.join("cohort.manifest"), cohort_dir.join(HIERARCHY_CACHE)])?;

    let train_batches: Vec<_> = train_subjects.iter().map(|s| s.training_batch()).collect();
    let val_batches: Vec<_> = val_subjects.iter().map(|s| s.training_batch()).collect();
    let run = RunDir(run_dir.to_path_buf());
    train_with(&model, &train_batches, &val_batches, &train_cfg, Some(&run), on_epoch)
}

/// A trained model restored from a run directory.
pub fn load_run(cohort_dir: &Path, cohort: &Cohort, run_dir: &Path, checkpoint: &str) -> Result<(Model, KeyValues, PathBuf)> {
    let echo = KeyValues::load(&run_dir.join("config.echo"))?;
    let cfg = model_config(&echo)?;
    let h = hierarchy(cohort_dir, cohort, &cfg, false)?;
    let model = Model::new(&cfg, &h)?;
    let ckpt = run_dir.join(format!("{checkpoint}.ckpt"));
    load_checkpoint(&ckpt)?.load_into(model.params())?;
    Ok((model, echo, ckpt))
}

/// Runs `protocols` on `split` for the trained model and the copy-reference oracle,
/// writing `metrics/{protocol}.csv`, `metrics/{protocol}_copy_reference.csv` and
/// `metrics/summary.csv`.
pub fn evaluate(
    cohort_dir: &Path,
    run_dir: &Path,
    results_dir: &Path,
    protocols: &[Protocol],
    split: Split,
    checkpoint: &str,
) -> Result<Vec<ProtocolResult>> {
    let cohort = Cohort::load(cohort_dir)?;
    let (model, mut echo, ckpt) = load_run(cohort_dir, &cohort, run_dir, checkpoint)?;
    let subjects = cohort.split(split);
    let out = ResultsDir::create(results_dir)?;
    echo.set("split", split);
    echo.set("checkpoint", checkpoint);
    out.write_config(&echo)?;
    out.write_manifest(&[cohort_dir.join("cohort.manifest"), cohort_dir.join(HIERARCHY_CACHE), ckpt])?;

    let params = model.params().n_scalars();
    let mut results = Vec::new();
    let mut baselines = Vec::new();
    for &p in protocols {
        let r = run_protocol(p, &model, &subjects)?;
        let b = run_protocol(p, &CopyReference, &subjects)?;
        out.write_metrics(&p.to_string(), &r.to_csv())?;
        out.write_metrics(&format!("{p}_copy_reference"), &b.to_csv())?;
        results.push(r);
        baselines.push(b);
    }
    let mut rows: Vec<(&ProtocolResult, usize)> = results.iter().map(|r| (r, params)).collect();
    rows.extend(baselines.iter().map(|b| (b, 0)));
    out.write_metrics("summary", &summary_csv(&rows))?;
    Ok(results)
}

pub fn training_ids(run_dir: &Path) -> Result<BTreeSet<usize>> {
    let path = run_dir.join(TRAIN_SUBJECTS);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("bad subject id `{l}` in {}", path.display())))
        })
        .collect()
}

/// Heatmaps and inside/outside error ratios for every progressor in the cohort.
pub fn anomaly(cohort_dir: &Path, run_dir: &Path, results_dir: &Path, checkpoint: &str) -> Result<AnomalyReport> {
    let cohort = Cohort::load(cohort_dir)?;
    let (model, mut echo, ckpt) = load_run(cohort_dir, &cohort, run_dir, checkpoint)?;
    let ids = training_ids(run_dir)?;
    let progressors: Vec<&Subject> = cohort.subjects.iter().filter(|s| s.spec.group == Group::Progressor).collect();
    let out = ResultsDir::create(results_dir)?;
    echo.set("checkpoint", checkpoint);
    out.write_config(&echo)?;
    out.write_manifest(&[cohort_dir.join("cohort.manifest"), ckpt, run_dir.join(TRAIN_SUBJECTS)])?;
    let report = run_anomaly(&model, &ids, &progressors, &cohort.template, Some(&out.heatmaps()))?;
    out.write_metrics("anomaly", &report.to_csv())?;
    Ok(report)
}
