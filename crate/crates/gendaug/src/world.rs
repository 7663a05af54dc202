//! Synthetic-world data directories and the frozen feature network.
//!
//! `make_data` writes one dataset directory per split plus `world.json`,
//! which records target class names and the class-table row each target
//! label maps to.

use std::path::Path;

use gendaug_core::datasets::{downsample, make_gaussian_world, make_shape_world, ItemShape, LabeledDataset};
use gendaug_core::metrics::FeatureExtractor;
use gendaug_core::numerics::SeededRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_classifier, save_classifier};
use crate::config::{ClassifierSection, WorldConfig};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::store::{load_dataset, save_dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldInfo {
    pub class_names: Vec<String>,
    /// Class-table row of each target label.
    pub class_map: Vec<usize>,
    /// Names of the class-table rows (the pretraining corpus labels).
    pub table_names: Vec<String>,
    /// Feature dimension of the raw samples, used when no reference
    /// network is trained.
    pub item_len: usize,
}

pub const SPLITS: [&str; 4] = ["pretrain", "train", "val", "heldout"];

/// Renders the configured world and writes every split under `dir`.
pub fn make_data(dir: &Path, world: &WorldConfig, seed: u64) -> Result<WorldInfo> {
    let rng = SeededRng::new(seed, 0);
    let (info, splits): (WorldInfo, Vec<(&str, LabeledDataset)>) = match world {
        WorldConfig::Shapes(cfg) => {
            let w = make_shape_world(cfg, &rng)?;
            let info = WorldInfo {
                class_names: cfg.targets.iter().map(|t| t.trim().to_string()).collect(),
                class_map: w.target_to_corpus.clone(),
                table_names: cfg.corpus_labels(),
                item_len: w.target_train.shape().len(),
            };
            (info, vec![("pretrain", w.pretrain), ("train", w.target_train), ("val", w.target_val), ("heldout", w.target_heldout)])
        }
        WorldConfig::Gaussian(cfg) => {
            let (train, val) = make_gaussian_world(cfg, &rng)?;
            let names: Vec<String> = (0..cfg.class_count).map(|c| format!("class {c}")).collect();
            let info = WorldInfo {
                class_names: names.clone(),
                class_map: (0..cfg.class_count).collect(),
                table_names: names,
                item_len: cfg.dim,
            };
            (info, vec![("pretrain", train.clone()), ("train", train), ("val", val)])
        }
    };
    for (name, ds) in &splits {
        save_dataset(&dir.join(name), ds)?;
    }
    write_json(&dir.join("world.json"), &info)?;
    Ok(info)
}

pub fn load_world(dir: &Path) -> Result<WorldInfo> {
    read_json(&dir.join("world.json"))
}

pub fn load_split(dir: &Path, split: &str) -> Result<LabeledDataset> {
    load_dataset(&dir.join(split))
}

/// Trains the feature network on the held-out split and stores it in
/// `out`. Worlds without a held-out split use identity features.
///
/// The held-out images are downsampled to `shape` first, so each cascade
/// stage is scored at its own resolution.
pub fn train_reference(
    data_dir: &Path,
    section: Option<&ClassifierSection>,
    shape: ItemShape,
    seed: u64,
    out: &Path,
) -> Result<FeatureExtractor> {
    if !data_dir.join("heldout").join("manifest.json").exists() {
        let info = load_world(data_dir)?;
        write_json(&out.join("identity.json"), &info.item_len)?;
        return Ok(FeatureExtractor::Identity { dim: info.item_len });
    }
    let section = section.ok_or_else(|| Error::Config("the run configuration has no [reference] section".into()))?;
    let heldout = at_shape(&load_split(data_dir, "heldout")?, shape)?;
    let ext = FeatureExtractor::train_reference(&heldout, section.arch, &section.recipe, &mut SeededRng::new(seed, 0).substream(7))?;
    if let FeatureExtractor::Classifier(m) = &ext {
        save_classifier(out, m)?;
    }
    Ok(ext)
}

pub fn load_reference(dir: &Path) -> Result<FeatureExtractor> {
    if dir.join("model.json").exists() {
        return Ok(FeatureExtractor::Classifier(load_classifier(dir)?));
    }
    let identity = dir.join("identity.json");
    if identity.exists() {
        return Ok(FeatureExtractor::Identity { dim: read_json(&identity)? });
    }
    Err(Error::format(dir, "no reference feature network (model.json or identity.json)"))
}

/// `ds` box-downsampled to `shape`, whose sides must divide the stored ones.
pub fn at_shape(ds: &LabeledDataset, shape: ItemShape) -> Result<LabeledDataset> {
    if ds.shape() == shape {
        return Ok(ds.clone());
    }
    let (from, to) = (ds.shape().square_side(), shape.square_side());
    match (from, to) {
        (Some(a), Some(b)) if b > 0 && a % b == 0 && ds.shape().channels() == shape.channels() => {
            let src = ds.shape();
            Ok(ds.map_items(shape, |img| downsample(img, src, a / b))?)
        }
        _ => Err(Error::Config(format!("cannot resample {:?} items to {shape:?}", ds.shape()))),
    }
}
