use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape of one sample: a flat vector or an HWC image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ItemShape {
    Vector { dim: usize },
    Image { height: usize, width: usize, channels: usize },
}

impl ItemShape {
    pub fn image(side: usize, channels: usize) -> Self {
        ItemShape::Image { height: side, width: side, channels }
    }

    /// Number of scalars per item.
    pub fn len(&self) -> usize {
        match *self {
            ItemShape::Vector { dim } => dim,
            ItemShape::Image { height, width, channels } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        matches!(self, ItemShape::Image { .. })
    }

    /// Side length of a square image.
    pub fn square_side(&self) -> Option<usize> {
        match *self {
            ItemShape::Image { height, width, .. } if height == width => Some(height),
            _ => None,
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            ItemShape::Vector { .. } => 1,
            ItemShape::Image { channels, .. } => channels,
        }
    }

    /// Batch tensor shape for `n` items.
    pub fn batch_dims(&self, n: usize) -> Vec<usize> {
        match *self {
            ItemShape::Vector { dim } => vec![n, dim],
            ItemShape::Image { height, width, channels } => vec![n, height, width, channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Generated,
    Mixed,
}

/// Descriptive metadata carried alongside the samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Human-readable name per class id, if known.
    pub class_names: Vec<String>,
    pub seed: u64,
    /// Hash of the configuration that produced the samples.
    pub generator_hash: String,
    /// Model hash and sampler settings of generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<crate::harness::GenerationInfo>,
}

/// Pixel value → 8-bit code on the linear map `[-1, 1] → [0, 255]`.
pub fn pixel_to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5 + 0.5) as u8
}

pub fn u8_to_pixel(q: u8) -> f32 {
    q as f32 / 127.5 - 1.0
}

/// Snaps a pixel onto the 8-bit grid.
pub fn quantize_pixel(v: f32) -> f32 {
    u8_to_pixel(pixel_to_u8(v))
}

/// Labeled samples stored contiguously. Image datasets hold pixels on the
/// 8-bit grid in `[-1, 1]`, so storing them as bytes is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    shape: ItemShape,
    class_count: usize,
    data: Vec<f32>,
    labels: Vec<u32>,
    split: Split,
    provenance: Provenance,
    meta: DatasetMeta,
}

impl LabeledDataset {
    /// Validates labels and lengths. Image pixels are clamped to `[-1, 1]`
    /// and snapped to the 8-bit grid.
    pub fn new(
        shape: ItemShape,
        class_count: usize,
        mut data: Vec<f32>,
        labels: Vec<u32>,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        if class_count < 1 {
            return Err(Error::config("dataset needs at least one class"));
        }
        if shape.is_empty() || data.len() != labels.len() * shape.len() {
            return Err(Error::shape(labels.len() * shape.len(), data.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::OutOfRange(alloc::format!("label {l} for {class_count} classes")));
        }
        if shape.is_image() {
            data.iter_mut().for_each(|v| *v = quantize_pixel(*v));
        } else if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("dataset contains non-finite values"));
        }
        Ok(Self { shape, class_count, data, labels, split, provenance, meta: DatasetMeta::default() })
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn shape(&self) -> ItemShape {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let d = self.shape.len();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Item count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        self.labels.iter().for_each(|&l| counts[l as usize] += 1);
        counts
    }

    /// Every class has the same, nonzero number of items.
    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        counts[0] > 0 && counts.iter().all(|&c| c == counts[0])
    }

    /// New dataset made of the given items, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.shape.len();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.item(i));
            labels.push(self.labels[i]);
        }
        Self { data, labels, meta: self.meta.clone(), ..*self }
    }

    /// Indices of class `c` in item order.
    pub fn indices_of(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.label(i) == c).collect()
    }

    /// Applies `f` to every item, producing items of `shape`.
    pub fn map_items(&self, shape: ItemShape, mut f: impl FnMut(&[f32]) -> Result<Vec<f32>>) -> Result<Self> {
        let mut data = Vec::with_capacity(self.len() * shape.len());
        for i in 0..self.len() {
            let out = f(self.item(i))?;
            if out.len() != shape.len() {
                return Err(Error::shape(shape.len(), out.len()));
            }
            data.extend(out);
        }
        Ok(Self::new(shape, self.class_count, data, self.labels.clone(), self.split, self.provenance)?
            .with_meta(self.meta.clone()))
    }

    /// Concatenation of datasets with equal shape and class count.
    pub fn concat(parts: &[&LabeledDataset], provenance: Provenance) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::contract("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.shape != first.shape || p.class_count != first.class_count {
                return Err(Error::shape(
                    (first.shape, first.class_count),
                    (p.shape, p.class_count),
                ));
            }
            data.extend_from_slice(&p.data);
            labels.extend_from_slice(&p.labels);
        }
        Ok(Self { data, labels, provenance, meta: first.meta.clone(), ..**first })
    }

    /// Items whose bytes also occur in `other`.
    pub fn overlap_count(&self, other: &LabeledDataset) -> usize {
        if self.shape != other.shape {
            return 0;
        }
        let key = |s: &[f32]| s.iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
        let mut theirs: Vec<Vec<u32>> = (0..other.len()).map(|i| key(other.item(i))).collect();
        theirs.sort_unstable();
        (0..self.len()).filter(|&i| theirs.binary_search(&key(self.item(i))).is_ok()).count()
    }
}
