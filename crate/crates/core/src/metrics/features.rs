use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::fid::{fit_stats, GaussianStats};
use crate::cas::{train_classifier, ClassifierArch, ClassifierModel, TrainRecipe};
use crate::datasets::{LabeledDataset, Provenance};
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Frozen map from samples to the feature space FID is computed in.
#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    /// Raw sample values; exact for Gaussian data.
    Identity { dim: usize },
    /// Penultimate activations of a classifier trained on real data.
    Classifier(ClassifierModel),
}

impl FeatureExtractor {
    /// Trains the reference classifier on held-out real data.
    pub fn train_reference(
        heldout: &LabeledDataset,
        arch: ClassifierArch,
        recipe: &TrainRecipe,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heldout.provenance() != Provenance::Real {
            return Err(Error::Provenance("reference features must come from real data".into()));
        }
        let (model, _) = train_classifier(heldout, None, arch, recipe, rng)?;
        Ok(FeatureExtractor::Classifier(model))
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureExtractor::Identity { dim } => *dim,
            FeatureExtractor::Classifier(m) => m.feature_dim(),
        }
    }

    /// Features `[n, dim]` for items stored back to back.
    pub fn extract(&self, data: &[f32]) -> Result<Vec<f64>> {
        match self {
            FeatureExtractor::Identity { dim } => {
                if data.len() % dim != 0 {
                    return Err(Error::shape(*dim, data.len()));
                }
                Ok(data.iter().map(|&v| v as f64).collect())
            }
            FeatureExtractor::Classifier(m) => Ok(m.features(data)?.into_iter().map(f64::from).collect()),
        }
    }

    pub fn stats(&self, data: &[f32]) -> Result<GaussianStats> {
        fit_stats(&self.extract(data)?, self.dim())
    }

    /// Class posteriors `[n, C]`, available for classifier features only.
    pub fn probabilities(&self, data: &[f32]) -> Result<Vec<f64>> {
        match self {
            FeatureExtractor::Classifier(m) => m.probabilities(data),
            FeatureExtractor::Identity { .. } => {
                Err(Error::contract("identity features carry no class posteriors"))
            }
        }
    }
}

/// One evaluated metric, serialized as a JSON row by the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub std: Option<f64>,
    pub sample_count: usize,
    pub config_hash: String,
    pub reference_split: String,
}
