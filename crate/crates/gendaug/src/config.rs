//! Declarative run description loaded from TOML. Unknown keys anywhere in
//! the tree are rejected.

use std::path::{Path, PathBuf};

use gendaug_core::cas::{ClassifierArch, TrainRecipe};
use gendaug_core::cascade::{FinetuneConfig, ModelSpec, StageSampling, TrainConfig};
use gendaug_core::datasets::{GaussianWorldConfig, ShapeWorldConfig};
use gendaug_core::diffusion::SamplerConfig;
use gendaug_core::harness::{fingerprint, EvalBudget, SweepGrid};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::read_string;

/// Environment variable naming the default artifact root.
pub const DATA_DIR_ENV: &str = "GENDAUG_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldConfig {
    Shapes(ShapeWorldConfig),
    Gaussian(GaussianWorldConfig),
}

/// Architecture and recipe of a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub arch: ClassifierArch,
    pub recipe: TrainRecipe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub base: FinetuneConfig,
    /// Fine-tuning of the first super-resolution stage, if any.
    #[serde(default)]
    pub sr: Option<FinetuneConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: SweepGrid,
    #[serde(default)]
    pub budget: EvalBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub multipliers: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub world: Option<WorldConfig>,
    #[serde(default)]
    pub base: Option<ModelSpec>,
    #[serde(default)]
    pub sr: Option<ModelSpec>,
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub finetune: Option<FinetuneSection>,
    /// Feature network for FID and IS.
    #[serde(default)]
    pub reference: Option<ClassifierSection>,
    /// Classifier trained for CAS and augmentation experiments.
    #[serde(default)]
    pub classifier: Option<ClassifierSection>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub sr_sampler: Option<StageSampling>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub augment: Option<AugmentSection>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_string(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hash over every field; any parameter change alters it.
    pub fn hash(&self) -> String {
        fingerprint(self)
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| Error::Config(format!("the run configuration has no [{name}] section")))
    }
}

/// Artifact root: the explicit flag, then the config, then the
/// environment variable, then `./runs`.
pub fn artifact_root(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3

[world]
kind = "shapes"
image_size = 16
train_per_class = 20

[base]
schedule = { kind = "cosine", offset = 0.008 }
timesteps = 100
[base.denoiser]
item_shape = { kind = "image", height = 16, width = 16, channels = 3 }
class_count = 50
architecture = { kind = "u_net", widths = [16, 32], groups = 4 }

[sweep.grid]
guidance = [1.0, 2.0]
log_variance = [0.0]
steps = [10]
metrics = ["fid_train", "is"]
"#;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.seed, 3);
        match cfg.world.as_ref().unwrap() {
            WorldConfig::Shapes(s) => assert_eq!((s.image_size, s.train_per_class, s.val_per_class), (16, 20, 100)),
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.sweep.as_ref().unwrap().grid.cell_count(), 2);
        assert_eq!(cfg.sweep.as_ref().unwrap().budget.samples_per_cell, 2000);
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
        for bad in ["sed = 1", "[world]\nkind = \"shapes\"\nimage_sise = 8", "[sweep.grid]\nguidance=[1.0]\nlog_variance=[0.0]\nsteps=[1]\nmetrics=[\"fid\"]", "[base]\nfoo = 1"] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_every_parameter() {
        let a = RunConfig::parse(SAMPLE).unwrap();
        let mut b = a.clone();
        b.sweep.as_mut().unwrap().grid.guidance[1] = 2.5;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 4;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash(), RunConfig::parse(SAMPLE).unwrap().hash());
    }
}
