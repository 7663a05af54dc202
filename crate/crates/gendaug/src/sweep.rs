//! Parallel, resumable sweep execution.
//!
//! Each grid cell writes `cells/cell_<index>.json` (FID and IS) and, in the
//! second phase, `cas/cell_<index>.json`, both committed by rename. Cells
//! already on disk with a matching configuration hash are skipped when
//! resuming. Only the orchestrator writes `results.json`, `results.csv`
//! and `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gendaug_core::cas::{ClassifierArch, TrainRecipe};
use gendaug_core::harness::{
    cas_targets, cell_cas, evaluate_cell, EvalBudget, EvalContext, Generator, StageSelector, SweepGrid, SweepResult, SweepRow,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ClassifierSection, RunConfig};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir, read_json, write_atomic, write_json};
use crate::models::{stage_reference, Stages};
use crate::store::manifest_hashes;
use crate::world::{at_shape, load_split, load_world};

/// Provenance of a sweep or experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    /// Content hash of every input dataset or model, by role.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    /// Elapsed time of the invocation that wrote the manifest; the only
    /// field that varies between identical runs.
    pub wall_clock_seconds: f64,
    pub outcomes: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64, inputs: BTreeMap<String, String>) -> Self {
        Self {
            config_hash,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            artifacts: Vec::new(),
            wall_clock_seconds: 0.0,
            outcomes: BTreeMap::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Staged<T> {
    config_hash: String,
    value: T,
}

/// Job runner shared by sweeps and experiments: per-item staging files,
/// resumption and a bounded thread pool.
pub struct Stage<'a> {
    pub dir: PathBuf,
    pub config_hash: &'a str,
    pub jobs: usize,
    pub resume: bool,
}

impl Stage<'_> {
    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Loads a committed result for `key`, if resuming and present.
    fn cached<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let path = self.path(key);
        if !self.resume || !path.exists() {
            return Ok(None);
        }
        let staged: Staged<T> = read_json(&path)?;
        if staged.config_hash != self.config_hash {
            return Err(Error::format(path, "staged result belongs to a different configuration"));
        }
        Ok(Some(staged.value))
    }

    /// Runs `work` for every key not already committed and returns all
    /// results in key order.
    pub fn run<T, F>(&self, keys: &[String], work: F) -> Result<Vec<T>>
    where
        T: Serialize + DeserializeOwned + Send,
        F: Fn(usize) -> Result<T> + Sync,
    {
        create_dir(&self.dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            keys.par_iter()
                .enumerate()
                .map(|(i, key)| {
                    if let Some(v) = self.cached(key)? {
                        return Ok(v);
                    }
                    let value = work(i)?;
                    write_json(&self.path(key), &Staged { config_hash: self.config_hash.to_string(), value: &value })?;
                    Ok(value)
                })
                .collect()
        })
    }
}

pub struct SweepJob<'a> {
    pub generator: &'a Generator<'a>,
    pub grid: &'a SweepGrid,
    pub ctx: &'a EvalContext<'a>,
    pub budget: &'a EvalBudget,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
}

pub fn sweep_rows_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Two-phase sweep into `out`: FID and IS for every cell, then CAS for the
/// cells the budget's policy selects.
pub fn run_sweep_dir(job: &SweepJob<'_>, out: &Path, jobs: usize, resume: bool) -> Result<SweepResult> {
    let started = Instant::now();
    job.grid.validate()?;
    if !resume && out.join("cells").exists() {
        return Err(Error::Config(format!("{} already holds a sweep; pass --resume to continue it", out.display())));
    }
    let cells = job.grid.cells();
    let keys: Vec<String> = cells.iter().map(|c| format!("cell_{:05}", c.index)).collect();
    let phase1 = Stage { dir: out.join("cells"), config_hash: &job.config_hash, jobs, resume };
    let mut rows: Vec<SweepRow> = phase1.run(&keys, |i| {
        Ok(evaluate_cell(job.generator, job.grid, &cells[i], job.ctx, job.budget, job.seed)?)
    })?;
    let targets = cas_targets(job.grid, &rows, job.budget.cas)?;
    let cas_keys: Vec<String> = targets.iter().map(|&i| keys[i].clone()).collect();
    let phase2 = Stage { dir: out.join("cas"), config_hash: &job.config_hash, jobs, resume };
    let scores: Vec<(f64, f64)> = phase2.run(&cas_keys, |k| {
        Ok(cell_cas(job.generator, job.grid, &cells[targets[k]], job.ctx, job.budget, job.seed)?)
    })?;
    for (&i, (t1, t5)) in targets.iter().zip(scores) {
        rows[i].cas_top1 = Some(t1);
        rows[i].cas_top5 = Some(t5);
    }
    let result = SweepResult { rows };
    write_json(&out.join("results.json"), &result)?;
    write_atomic(&out.join("results.csv"), &sweep_rows_csv(&result.rows)?)?;
    let mut manifest = RunManifest::new(job.config_hash.clone(), job.seed, job.inputs.clone());
    manifest.artifacts = vec!["results.json".into(), "results.csv".into()];
    let best = result.rows.iter().filter_map(|r| r.fid_train.or(r.fid_val)).fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        manifest.outcomes.insert("best_fid".into(), best);
    }
    manifest.outcomes.insert("cells".into(), result.rows.len() as f64);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(result)
}

impl RunConfig {
    /// The CAS classifier, defaulting to the desk ResNet and CAS recipe.
    pub fn classifier_or_default(&self) -> ClassifierSection {
        self.classifier
            .clone()
            .unwrap_or(ClassifierSection { arch: ClassifierArch::resnet(), recipe: TrainRecipe::desk_cas() })
    }
}

/// Runs the configured `[sweep]` over the generator in `model_dir`.
///
/// A base-stage grid scores base samples at the base resolution; an SR grid
/// runs the full cascade. Real data is resampled to the scored resolution
/// and the stage's reference network is trained on first use.
pub fn sweep_from_config(
    config: &RunConfig,
    model_dir: &Path,
    data_dir: &Path,
    out: &Path,
    jobs: usize,
    resume: bool,
) -> Result<SweepResult> {
    let section = config.section(&config.sweep, "sweep")?;
    let stages = Stages::load(model_dir)?;
    let mut generator = stages.generator(config);
    if section.grid.stage == StageSelector::Base {
        generator.stages.clear();
    }
    let (stage, scored) = match (&stages.sr, generator.stages.is_empty()) {
        (Some(sr), false) => ("sr", sr),
        _ => ("base", &stages.base),
    };
    let extractor = stage_reference(config, data_dir, scored, &model_dir.join(format!("reference_{stage}")))?;
    let shape = generator.output_shape();
    let world = load_world(data_dir)?;
    let train = at_shape(&load_split(data_dir, "train")?, shape)?;
    let val = at_shape(&load_split(data_dir, "val")?, shape)?;
    let classifier = config.classifier_or_default();
    let ctx = EvalContext::new(&world.class_map, &world.class_names, &train, &val, &extractor, classifier.arch, &classifier.recipe)?;
    let mut inputs = manifest_hashes(&[("train", &data_dir.join("train")), ("val", &data_dir.join("val"))])?;
    inputs.insert("model".into(), generator.model_hash());
    let job = SweepJob {
        generator: &generator,
        grid: &section.grid,
        ctx: &ctx,
        budget: &section.budget,
        seed: config.seed,
        config_hash: config.hash(),
        inputs,
    };
    run_sweep_dir(&job, out, jobs, resume)
}
