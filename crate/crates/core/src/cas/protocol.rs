use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierArch, ClassifierModel};
use super::train::{evaluate, train_classifier, TrainRecipe};
use crate::datasets::{generated_quota, mix_datasets, resize_center_crop, ItemShape, LabeledDataset, Provenance};
use crate::harness::fingerprint;
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Resize-then-center-crop applied to every image before classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub resize_to: usize,
    pub crop_to: usize,
}

impl Preprocess {
    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        let shape = ds.shape();
        if shape.square_side() == Some(self.crop_to) && self.resize_to == self.crop_to {
            return Ok(ds.clone());
        }
        let out = ItemShape::image(self.crop_to, shape.channels());
        ds.map_items(out, |img| resize_center_crop(img, shape, self.resize_to, self.crop_to))
    }
}

/// Outcome of one classification-accuracy-score run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasRecord {
    pub top1: f64,
    pub top5: f64,
    pub train_size: usize,
    pub seed: u64,
    pub recipe_hash: String,
    pub generator_hash: String,
}

/// Trains a fresh classifier on `generated` only and scores it on the real
/// `real_val` set.
///
/// Both sets pass through `preprocess` first. The run refuses to start if
/// `generated` is not marked generated, `real_val` is not marked real, or
/// any preprocessed generated item is byte-identical to a validation item.
pub fn cas(
    generated: &LabeledDataset,
    real_val: &LabeledDataset,
    arch: ClassifierArch,
    recipe: &TrainRecipe,
    preprocess: Option<Preprocess>,
    rng: &mut SeededRng,
) -> Result<CasRecord> {
    cas_with_model(generated, real_val, arch, recipe, preprocess, rng).map(|(rec, _)| rec)
}

/// [`cas`] that also returns the trained classifier.
pub fn cas_with_model(
    generated: &LabeledDataset,
    real_val: &LabeledDataset,
    arch: ClassifierArch,
    recipe: &TrainRecipe,
    preprocess: Option<Preprocess>,
    rng: &mut SeededRng,
) -> Result<(CasRecord, ClassifierModel)> {
    if generated.provenance() != Provenance::Generated {
        return Err(Error::Provenance(alloc::format!(
            "training set for CAS is {:?}, expected generated",
            generated.provenance()
        )));
    }
    if real_val.provenance() != Provenance::Real {
        return Err(Error::Provenance(alloc::format!(
            "validation set for CAS is {:?}, expected real",
            real_val.provenance()
        )));
    }
    let (train, val) = match preprocess {
        Some(p) => (p.apply(generated)?, p.apply(real_val)?),
        None => (generated.clone(), real_val.clone()),
    };
    let overlap = train.overlap_count(&val);
    if overlap > 0 {
        return Err(Error::Provenance(alloc::format!(
            "{overlap} generated items also occur in the validation set"
        )));
    }
    let (model, _) = train_classifier(&train, None, arch, recipe, rng)?;
    let acc = evaluate(&model, &val, &[1, 5.min(val.class_count())])?;
    let record = CasRecord {
        top1: acc[0],
        top5: acc[1],
        train_size: train.len(),
        seed: rng.seed(),
        recipe_hash: fingerprint(recipe),
        generator_hash: generated.meta().generator_hash.clone(),
    };
    Ok((record, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRow {
    pub multiplier: f64,
    pub seed: u64,
    pub total_size: usize,
    pub top1: f64,
    pub top5: f64,
    /// `top1` minus the same seed's real-only `top1`.
    pub delta_vs_baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSummary {
    pub multiplier: f64,
    pub total_size: usize,
    pub top1_mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub top1_std: f64,
    pub top5_mean: f64,
    pub delta_vs_baseline: f64,
}

/// Per-class generated items needed to serve every multiplier.
pub fn generation_budget(real_train: &LabeledDataset, multipliers: &[f64]) -> Result<usize> {
    let counts = real_train.class_counts();
    let mut most = 0;
    for &m in multipliers {
        for &c in &counts {
            most = most.max(generated_quota(c, m)?);
        }
    }
    Ok(most)
}

/// Trains and scores one `(multiplier, seed)` cell. `delta_vs_baseline`
/// is left at zero; [`fill_deltas`] sets it once the baseline is known.
///
/// Cells with the same seed share their initialization and data order
/// stream, so `multiplier = 0` reproduces the real-only baseline exactly.
pub fn augmentation_cell(
    real_train: &LabeledDataset,
    real_val: &LabeledDataset,
    pool: &LabeledDataset,
    multiplier: f64,
    seed: u64,
    arch: ClassifierArch,
    recipe: &TrainRecipe,
) -> Result<AugmentationRow> {
    let root = SeededRng::new(seed, 0);
    let mixed = mix_datasets(real_train, pool, multiplier, &mut root.substream(10))?;
    let (model, _) = train_classifier(&mixed, None, arch, recipe, &mut root.substream(11))?;
    let acc = evaluate(&model, real_val, &[1, 5.min(real_val.class_count())])?;
    Ok(AugmentationRow {
        multiplier,
        seed,
        total_size: mixed.len(),
        top1: acc[0],
        top5: acc[1],
        delta_vs_baseline: 0.0,
    })
}

/// Sets every row's delta against the `multiplier = 0` row of its seed.
pub fn fill_deltas(rows: &mut [AugmentationRow]) -> Result<()> {
    let baselines: Vec<(u64, f64)> = rows.iter().filter(|r| r.multiplier == 0.0).map(|r| (r.seed, r.top1)).collect();
    for r in rows.iter_mut() {
        let base = baselines
            .iter()
            .find(|(s, _)| *s == r.seed)
            .ok_or_else(|| Error::contract(alloc::format!("no baseline row for seed {}", r.seed)))?;
        r.delta_vs_baseline = r.top1 - base.1;
    }
    Ok(())
}

/// Mean and spread per multiplier, in order of first appearance.
pub fn summarize(rows: &[AugmentationRow]) -> Vec<AugmentationSummary> {
    let mut multipliers: Vec<f64> = Vec::new();
    for r in rows {
        if !multipliers.contains(&r.multiplier) {
            multipliers.push(r.multiplier);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let base_mean = {
        let b: Vec<f64> = rows.iter().filter(|r| r.multiplier == 0.0).map(|r| r.top1).collect();
        if b.is_empty() { f64::NAN } else { mean(&b) }
    };
    multipliers
        .into_iter()
        .map(|m| {
            let cell: Vec<&AugmentationRow> = rows.iter().filter(|r| r.multiplier == m).collect();
            let top1: Vec<f64> = cell.iter().map(|r| r.top1).collect();
            let top5: Vec<f64> = cell.iter().map(|r| r.top5).collect();
            let mu = mean(&top1);
            let var = if top1.len() > 1 {
                top1.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (top1.len() - 1) as f64
            } else {
                0.0
            };
            AugmentationSummary {
                multiplier: m,
                total_size: cell[0].total_size,
                top1_mean: mu,
                top1_std: var.sqrt(),
                top5_mean: mean(&top5),
                delta_vs_baseline: mu - base_mean,
            }
        })
        .collect()
}

/// Real-plus-generated training at each multiplier and seed, scored on
/// real validation data.
///
/// `generate(per_class)` is called once for the largest per-class budget;
/// smaller multipliers reuse a prefix of each class from that pool.
pub fn augmentation_experiment(
    real_train: &LabeledDataset,
    real_val: &LabeledDataset,
    mut generate: impl FnMut(usize) -> Result<LabeledDataset>,
    multipliers: &[f64],
    seeds: &[u64],
    arch: ClassifierArch,
    recipe: &TrainRecipe,
) -> Result<Vec<AugmentationRow>> {
    if !multipliers.contains(&0.0) {
        return Err(Error::config("multipliers must include 0 for the real-only baseline"));
    }
    if seeds.is_empty() {
        return Err(Error::config("augmentation experiment needs at least one seed"));
    }
    let budget = generation_budget(real_train, multipliers)?;
    let pool = if budget > 0 { generate(budget)? } else { real_train.select(&[]) };
    if pool.provenance() != Provenance::Generated && budget > 0 {
        return Err(Error::Provenance("generator output is not marked generated".into()));
    }
    let mut rows = Vec::with_capacity(multipliers.len() * seeds.len());
    for &m in multipliers {
        for &seed in seeds {
            rows.push(augmentation_cell(real_train, real_val, &pool, m, seed, arch, recipe)?);
        }
    }
    fill_deltas(&mut rows)?;
    Ok(rows)
}
