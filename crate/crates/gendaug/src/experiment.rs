//! Real-plus-generated augmentation experiments over multipliers and seeds,
//! run as resumable parallel cells.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use gendaug_core::cas::{augmentation_cell, fill_deltas, generation_budget, summarize, AugmentationRow, AugmentationSummary, ClassifierArch, TrainRecipe};
use gendaug_core::datasets::{LabeledDataset, Provenance};
use gendaug_core::harness::fingerprint;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, WorldConfig};
use crate::error::{Error, Result};
use crate::store::{load_dataset, manifest_hashes};
use crate::world::load_split;
use crate::fsutil::{write_atomic, write_json};
use crate::sweep::{RunManifest, Stage};

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub world: String,
    pub multiplier: f64,
    pub total_size: usize,
    pub seed: u64,
    pub top1: f64,
    pub top5: f64,
    pub delta_vs_baseline: f64,
    pub recipe_hash: String,
    pub generator_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<AugmentationSummary>,
}

pub struct AugmentJob<'a> {
    pub world: String,
    pub real_train: &'a LabeledDataset,
    pub real_val: &'a LabeledDataset,
    pub pool: &'a LabeledDataset,
    pub multipliers: &'a [f64],
    pub seeds: &'a [u64],
    pub arch: ClassifierArch,
    pub recipe: &'a TrainRecipe,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn experiment_rows_csv(rows: &[ExperimentRow]) -> Result<Vec<u8>> {
    to_csv(rows)
}

pub fn summary_csv(summary: &[AugmentationSummary]) -> Result<Vec<u8>> {
    to_csv(summary)
}

/// Trains one classifier per `(multiplier, seed)` cell and writes
/// `results.json`, `results.csv`, `summary.csv` and `manifest.json`.
pub fn run_augment_dir(job: &AugmentJob<'_>, out: &Path, jobs: usize, resume: bool) -> Result<ExperimentResult> {
    let started = Instant::now();
    if !job.multipliers.contains(&0.0) {
        return Err(Error::Config("multipliers must include 0 for the real-only baseline".into()));
    }
    if job.seeds.is_empty() {
        return Err(Error::Config("augmentation experiment needs at least one seed".into()));
    }
    if job.pool.provenance() != Provenance::Generated {
        return Err(gendaug_core::Error::Provenance("augmentation pool is not marked generated".into()).into());
    }
    let need = generation_budget(job.real_train, job.multipliers)?;
    let have = job.pool.class_counts().into_iter().min().unwrap_or(0);
    if have < need {
        return Err(Error::Config(format!("pool holds {have} items for some class, the largest multiplier needs {need}")));
    }
    if !resume && out.join("cells").exists() {
        return Err(Error::Config(format!("{} already holds an experiment; pass --resume to continue it", out.display())));
    }
    let cells: Vec<(f64, u64)> = job.multipliers.iter().flat_map(|&m| job.seeds.iter().map(move |&s| (m, s))).collect();
    let keys: Vec<String> = cells.iter().enumerate().map(|(i, (m, s))| format!("cell_{i:03}_m{m}_s{s}")).collect();
    let stage = Stage { dir: out.join("cells"), config_hash: &job.config_hash, jobs, resume };
    let mut rows: Vec<AugmentationRow> = stage.run(&keys, |i| {
        let (m, s) = cells[i];
        Ok(augmentation_cell(job.real_train, job.real_val, job.pool, m, s, job.arch, job.recipe)?)
    })?;
    fill_deltas(&mut rows)?;
    let summary = summarize(&rows);
    let recipe_hash = fingerprint(job.recipe);
    let generator_hash = job.pool.meta().generator_hash.clone();
    let rows: Vec<ExperimentRow> = rows
        .into_iter()
        .map(|r| ExperimentRow {
            world: job.world.clone(),
            multiplier: r.multiplier,
            total_size: r.total_size,
            seed: r.seed,
            top1: r.top1,
            top5: r.top5,
            delta_vs_baseline: r.delta_vs_baseline,
            recipe_hash: recipe_hash.clone(),
            generator_hash: generator_hash.clone(),
        })
        .collect();
    let result = ExperimentResult { rows, summary };
    write_json(&out.join("results.json"), &result)?;
    write_atomic(&out.join("results.csv"), &experiment_rows_csv(&result.rows)?)?;
    write_atomic(&out.join("summary.csv"), &summary_csv(&result.summary)?)?;
    let mut manifest = RunManifest::new(job.config_hash.clone(), job.seeds[0], job.inputs.clone());
    manifest.artifacts = vec!["results.json".into(), "results.csv".into(), "summary.csv".into()];
    for s in &result.summary {
        manifest.outcomes.insert(format!("top1_mean_m{}", s.multiplier), s.top1_mean);
    }
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(result)
}

/// Runs the configured `[augment]` experiment with the generated pool in
/// `pool_dir` against the real splits in `data_dir`.
pub fn augment_from_config(
    config: &RunConfig,
    data_dir: &Path,
    pool_dir: &Path,
    out: &Path,
    jobs: usize,
    resume: bool,
) -> Result<ExperimentResult> {
    let section = config.section(&config.augment, "augment")?;
    let classifier = config.classifier_or_default();
    let (train, val, pool) = (load_split(data_dir, "train")?, load_split(data_dir, "val")?, load_dataset(pool_dir)?);
    let inputs = manifest_hashes(&[("train", &data_dir.join("train")), ("val", &data_dir.join("val")), ("pool", pool_dir)])?;
    let world = match &config.world {
        Some(WorldConfig::Gaussian(_)) => "gaussian",
        _ => "shapes",
    };
    let job = AugmentJob {
        world: world.into(),
        real_train: &train,
        real_val: &val,
        pool: &pool,
        multipliers: &section.multipliers,
        seeds: &section.seeds,
        arch: classifier.arch,
        recipe: &classifier.recipe,
        config_hash: config.hash(),
        inputs,
    };
    run_augment_dir(&job, out, jobs, resume)
}
