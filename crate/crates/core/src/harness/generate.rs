use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::fingerprint;
use crate::cascade::{sr_sample, CascadeModel, DiffusionModel, StageSampling};
use crate::datasets::{DatasetMeta, ItemShape, LabeledDataset, Provenance, Split};
use crate::diffusion::SamplerConfig;
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Model hash and sampler settings recorded with a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub model_hash: String,
    pub base_sampler: SamplerConfig,
    #[serde(default)]
    pub stages: Vec<StageSampling>,
    /// Class-table row used for each dataset label.
    pub class_map: Vec<usize>,
}

/// A base model, optionally followed by super-resolution stages, with the
/// sampler settings every stage runs under.
#[derive(Clone, Debug)]
pub struct Generator<'a> {
    pub base: &'a DiffusionModel,
    pub base_sampler: SamplerConfig,
    pub stages: Vec<(&'a DiffusionModel, StageSampling)>,
}

impl<'a> Generator<'a> {
    pub fn base(model: &'a DiffusionModel, sampler: SamplerConfig) -> Self {
        Self { base: model, base_sampler: sampler, stages: Vec::new() }
    }

    pub fn cascade(cascade: &'a CascadeModel) -> Self {
        Self {
            base: &cascade.base,
            base_sampler: cascade.base_sampler.clone(),
            stages: cascade.stages.iter().map(|(m, s)| (m, s.clone())).collect(),
        }
    }

    pub fn output_shape(&self) -> ItemShape {
        self.stages.last().map_or(self.base.spec().output_shape(), |(m, _)| m.spec().output_shape())
    }

    pub fn class_count(&self) -> usize {
        self.base.class_count()
    }

    /// Hash over every stage's parameters.
    pub fn model_hash(&self) -> String {
        let hashes: Vec<String> =
            core::iter::once(self.base.fingerprint()).chain(self.stages.iter().map(|(m, _)| m.fingerprint())).collect();
        fingerprint(&hashes)
    }

    /// One sample per entry of `classes` (class-table ids), passed through
    /// every stage in order.
    pub fn sample(&self, classes: &[usize], rng: &mut SeededRng) -> Result<Vec<f32>> {
        let mut x = self.base.sample(classes, &self.base_sampler, rng)?;
        for (stage, s) in &self.stages {
            x = sr_sample(stage, &x, classes, &s.sampler, s.aug_level, rng)?;
        }
        Ok(x)
    }
}

/// Exactly `per_class` generated items for every target class.
///
/// Label `y` of the result is sampled as class-table row `class_map[y]`.
/// Items cycle through the classes in label order; pixels are snapped to
/// the 8-bit grid so the dataset round-trips through byte storage.
pub fn generate_dataset(
    generator: &Generator<'_>,
    class_map: &[usize],
    class_names: &[String],
    per_class: usize,
    rng: &mut SeededRng,
) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::config("per-class count must be at least 1"));
    }
    if class_map.is_empty() {
        return Err(Error::config("class map must name at least one class"));
    }
    if let Some(&id) = class_map.iter().find(|&&id| id >= generator.class_count()) {
        return Err(Error::OutOfRange(alloc::format!("class id {id} for {} classes", generator.class_count())));
    }
    let c = class_map.len();
    let labels: Vec<u32> = (0..per_class * c).map(|k| (k % c) as u32).collect();
    let ids: Vec<usize> = labels.iter().map(|&y| class_map[y as usize]).collect();
    let seed = rng.seed();
    let data = generator.sample(&ids, rng)?;
    let model_hash = generator.model_hash();
    let info = GenerationInfo {
        model_hash,
        base_sampler: generator.base_sampler.clone(),
        stages: generator.stages.iter().map(|(_, s)| s.clone()).collect(),
        class_map: class_map.to_vec(),
    };
    let meta = DatasetMeta {
        class_names: class_names.to_vec(),
        seed,
        generator_hash: fingerprint(&info),
        generation: Some(info),
    };
    Ok(LabeledDataset::new(generator.output_shape(), c, data, labels, Split::Train, Provenance::Generated)?.with_meta(meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{cascade_sample, ModelSpec};
    use crate::diffusion::{DenoiserConfig, ScheduleKind};

    fn tiny() -> CascadeModel {
        let rng = &mut SeededRng::new(0, 0);
        let base = ModelSpec::base(DenoiserConfig::unet(4, 1, 12, [4, 4]), ScheduleKind::linear(), 10);
        let sr = ModelSpec::super_resolution(DenoiserConfig::unet(8, 1, 12, [4, 4]), ScheduleKind::linear(), 10, 2);
        CascadeModel {
            base: DiffusionModel::new(base, rng).unwrap(),
            base_sampler: SamplerConfig::ddpm(3),
            stages: alloc::vec![(
                DiffusionModel::new(sr, rng).unwrap(),
                StageSampling { sampler: SamplerConfig::ddim(2), aug_level: 0.1 }
            )],
        }
    }

    #[test]
    fn balanced_and_reproducible() {
        let c = tiny();
        let g = Generator::cascade(&c);
        let map: Vec<usize> = (0..10).map(|k| k + 2).collect();
        let a = generate_dataset(&g, &map, &[], 50, &mut SeededRng::new(4, 0)).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a.class_counts(), [50; 10]);
        assert_eq!(a.provenance(), Provenance::Generated);
        assert_eq!(a.shape(), ItemShape::image(8, 1));
        let b = generate_dataset(&g, &map, &[], 50, &mut SeededRng::new(4, 0)).unwrap();
        assert_eq!(a, b);
        let info = a.meta().generation.as_ref().unwrap();
        assert_eq!(info.model_hash, g.model_hash());
        assert_eq!(info.stages[0].aug_level, 0.1);
        assert!(generate_dataset(&g, &map, &[], 0, &mut SeededRng::new(4, 0)).is_err());
        assert!(generate_dataset(&g, &[12], &[], 1, &mut SeededRng::new(4, 0)).is_err());
    }

    #[test]
    fn matches_cascade_sampling() {
        let c = tiny();
        let ids = [3, 7, 7, 0];
        let direct = cascade_sample(&c, &ids, &mut SeededRng::new(9, 1)).unwrap();
        assert_eq!(Generator::cascade(&c).sample(&ids, &mut SeededRng::new(9, 1)).unwrap(), direct);
    }
}
