//! Model directories and fine-tuning checkpoints.
//!
//! A model directory holds `model.json` (architecture, parameter names and
//! shapes, digest) and `params.bin` (every parameter as little-endian `f32`
//! in declaration order). Fine-tuning writes one `ckpt_<step>/` model
//! directory per checkpoint plus `selection.json`.

use std::path::{Path, PathBuf};

use gendaug_core::cas::{ClassifierConfig, ClassifierModel};
use gendaug_core::cascade::{DiffusionModel, ModelSpec, Selection};
use gendaug_core::numerics::ParamSet;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read, read_json, sha256_hex, write_atomic, write_json};

pub const MODEL_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile<C> {
    pub format: u32,
    pub config: C,
    pub params: Vec<ParamEntry>,
    pub params_sha256: String,
}

fn write_model<C: Serialize>(dir: &Path, config: &C, params: &ParamSet<f32>) -> Result<()> {
    let bytes: Vec<u8> = params.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    let file = ModelFile {
        format: MODEL_FORMAT,
        config,
        params: params
            .names()
            .iter()
            .zip(params.iter())
            .map(|(name, t)| ParamEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
        params_sha256: sha256_hex(&bytes),
    };
    write_atomic(&dir.join("params.bin"), &bytes)?;
    write_json(&dir.join("model.json"), &file)
}

fn read_model<C: DeserializeOwned>(dir: &Path) -> Result<(ModelFile<C>, Vec<f32>)> {
    let meta_path = dir.join("model.json");
    let file: ModelFile<C> = read_json(&meta_path)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::format(meta_path, format!("model format {} is not {MODEL_FORMAT}", file.format)));
    }
    let path = dir.join("params.bin");
    let bytes = read(&path)?;
    let expected: usize = file.params.iter().map(|p| p.shape.iter().product::<usize>() * 4).sum();
    if bytes.len() != expected {
        return Err(Error::format(path, format!("params.bin holds {} bytes, expected {expected}", bytes.len())));
    }
    if sha256_hex(&bytes) != file.params_sha256 {
        return Err(Error::format(path, "content does not match the manifest digest"));
    }
    let flat = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((file, flat))
}

fn check_layout(dir: &Path, file_params: &[ParamEntry], params: &ParamSet<f32>) -> Result<()> {
    let same = file_params.len() == params.len()
        && file_params.iter().zip(params.names().iter().zip(params.iter())).all(|(e, (n, t))| &e.name == n && e.shape == t.shape());
    if !same {
        return Err(Error::format(dir.join("model.json"), "parameter layout does not match the architecture"));
    }
    Ok(())
}

pub fn save_diffusion(dir: &Path, model: &DiffusionModel) -> Result<()> {
    write_model(dir, model.spec(), model.params())
}

pub fn load_diffusion(dir: &Path) -> Result<DiffusionModel> {
    let (file, flat) = read_model::<ModelSpec>(dir)?;
    let model = DiffusionModel::from_params(file.config, &flat)?;
    check_layout(dir, &file.params, model.params())?;
    Ok(model)
}

pub fn save_classifier(dir: &Path, model: &ClassifierModel) -> Result<()> {
    write_model(dir, model.config(), model.params())
}

pub fn load_classifier(dir: &Path) -> Result<ClassifierModel> {
    let (file, flat) = read_model::<ClassifierConfig>(dir)?;
    let model = ClassifierModel::from_params(file.config, &flat)?;
    check_layout(dir, &file.params, model.params())?;
    Ok(model)
}

pub fn checkpoint_dir(root: &Path, step: usize) -> PathBuf {
    root.join(format!("ckpt_{step}"))
}

pub fn save_selection(root: &Path, selection: &Selection) -> Result<()> {
    write_json(&root.join("selection.json"), selection)
}

pub fn load_selection(root: &Path) -> Result<Selection> {
    read_json(&root.join("selection.json"))
}

/// The checkpoint `selection.json` chose.
pub fn load_selected(root: &Path) -> Result<DiffusionModel> {
    let sel = load_selection(root)?;
    load_diffusion(&checkpoint_dir(root, sel.best_step))
}
