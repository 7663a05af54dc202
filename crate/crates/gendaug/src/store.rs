//! On-disk dataset directories.
//!
//! A dataset lives in a directory holding `manifest.json`, `data.bin`
//! (images as one byte per pixel value, vectors as little-endian `f32`) and
//! `labels.bin` (little-endian `u32`). The manifest records shapes, counts
//! and SHA-256 digests of both binary files.

use std::path::Path;

use gendaug_core::datasets::{pixel_to_u8, u8_to_pixel, DatasetMeta, ItemShape, LabeledDataset, Provenance, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read, read_json, sha256_hex, write_atomic, write_json};

pub const DATASET_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    U8,
    F32Le,
}

impl Encoding {
    fn bytes_per_value(self) -> usize {
        match self {
            Encoding::U8 => 1,
            Encoding::F32Le => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: u32,
    pub item_shape: ItemShape,
    pub class_count: usize,
    pub count: usize,
    pub split: Split,
    pub provenance: Provenance,
    pub encoding: Encoding,
    pub class_counts: Vec<usize>,
    pub data_sha256: String,
    pub labels_sha256: String,
    pub meta: DatasetMeta,
}

impl DatasetManifest {
    /// Digest identifying the stored content.
    pub fn content_hash(&self) -> String {
        sha256_hex(format!("{}:{}", self.data_sha256, self.labels_sha256).as_bytes())
    }
}

fn encode(ds: &LabeledDataset) -> (Encoding, Vec<u8>) {
    if ds.shape().is_image() {
        (Encoding::U8, ds.data().iter().map(|&v| pixel_to_u8(v)).collect())
    } else {
        (Encoding::F32Le, ds.data().iter().flat_map(|v| v.to_le_bytes()).collect())
    }
}

pub fn save_dataset(dir: &Path, ds: &LabeledDataset) -> Result<DatasetManifest> {
    let (encoding, data) = encode(ds);
    let labels: Vec<u8> = ds.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT,
        item_shape: ds.shape(),
        class_count: ds.class_count(),
        count: ds.len(),
        split: ds.split(),
        provenance: ds.provenance(),
        encoding,
        class_counts: ds.class_counts(),
        data_sha256: sha256_hex(&data),
        labels_sha256: sha256_hex(&labels),
        meta: ds.meta().clone(),
    };
    write_atomic(&dir.join("data.bin"), &data)?;
    write_atomic(&dir.join("labels.bin"), &labels)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let m: DatasetManifest = read_json(&path)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::format(path, format!("dataset format {} is not {DATASET_FORMAT}", m.format)));
    }
    Ok(m)
}

fn check_len(path: &Path, what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::format(path, format!("{what} holds {actual} bytes, expected {expected}")));
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let m = load_manifest(dir)?;
    let data_path = dir.join("data.bin");
    let labels_path = dir.join("labels.bin");
    let data = read(&data_path)?;
    let labels = read(&labels_path)?;
    check_len(&data_path, "data.bin", m.count * m.item_shape.len() * m.encoding.bytes_per_value(), data.len())?;
    check_len(&labels_path, "labels.bin", m.count * 4, labels.len())?;
    if sha256_hex(&data) != m.data_sha256 {
        return Err(Error::format(&data_path, "content does not match the manifest digest"));
    }
    if sha256_hex(&labels) != m.labels_sha256 {
        return Err(Error::format(&labels_path, "content does not match the manifest digest"));
    }
    let values: Vec<f32> = match m.encoding {
        Encoding::U8 => data.iter().map(|&b| u8_to_pixel(b)).collect(),
        Encoding::F32Le => data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
    };
    let labels: Vec<u32> = labels.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let ds = LabeledDataset::new(m.item_shape, m.class_count, values, labels, m.split, m.provenance)?.with_meta(m.meta);
    if ds.class_counts() != m.class_counts {
        return Err(Error::format(dir.join("manifest.json"), "class counts disagree with labels.bin"));
    }
    Ok(ds)
}


/// Content hash of each dataset directory, keyed by role.
pub fn manifest_hashes(entries: &[(&str, &Path)]) -> Result<std::collections::BTreeMap<String, String>> {
    entries.iter().map(|(role, dir)| Ok((role.to_string(), load_manifest(dir)?.content_hash()))).collect()
}
