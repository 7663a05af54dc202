use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::model::DiffusionModel;
use crate::datasets::{upsample, ItemShape};
use crate::diffusion::{Conditioning, SamplerConfig};
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Signal fraction `ᾱ(a) = cos²(aπ/2)` of augmentation level `a`.
pub fn aug_alpha_bar(a: f64) -> f64 {
    let c = (a * core::f64::consts::FRAC_PI_2).cos();
    c * c
}

/// Corrupts `z` to `√ᾱ(a) z + √(1 − ᾱ(a)) ε` and returns it with `a`.
pub fn noise_augment(z: &[f32], a: f64, rng: &mut SeededRng) -> Result<(Vec<f32>, f64)> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::OutOfRange(alloc::format!("augmentation level {a}")));
    }
    if a == 0.0 {
        return Ok((z.to_vec(), a));
    }
    let ab = aug_alpha_bar(a);
    let (s, n) = (ab.sqrt(), (1.0 - ab).max(0.0).sqrt());
    Ok((z.iter().map(|&v| (s * v as f64 + n * rng.normal()) as f32).collect(), a))
}

/// Upsamples every item of a low-resolution batch and noise-augments each
/// with its own level, giving the conditioning input of an SR stage.
pub(crate) fn lowres_condition(
    lowres: &[f32],
    input: ItemShape,
    factor: usize,
    levels: &[f64],
    rng: &mut SeededRng,
) -> Result<Vec<f32>> {
    let d = input.len();
    if lowres.len() != levels.len() * d {
        return Err(Error::shape(input.batch_dims(levels.len()), lowres.len()));
    }
    let mut out = Vec::with_capacity(lowres.len() * factor * factor);
    for (item, &a) in lowres.chunks(d).zip(levels) {
        let up = upsample(item, input, factor)?;
        out.extend(noise_augment(&up, a, rng)?.0);
    }
    Ok(out)
}

/// Runs an SR stage's reverse chain for `lowres` (items at the stage's
/// input resolution), conditioning every denoiser call on the upsampled,
/// noise-augmented input at level `a` and the item's class.
pub fn sr_sample(
    stage: &DiffusionModel,
    lowres: &[f32],
    classes: &[usize],
    config: &SamplerConfig,
    a: f64,
    rng: &mut SeededRng,
) -> Result<Vec<f32>> {
    let spec = stage.spec();
    let (Some(input), Some(factor)) = (spec.input_shape(), spec.sr_factor) else {
        return Err(Error::contract("sr_sample needs a super-resolution stage"));
    };
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::OutOfRange(alloc::format!("augmentation level {a}")));
    }
    if lowres.len() != classes.len() * input.len() {
        return Err(Error::shape(input.batch_dims(classes.len()), lowres.len()));
    }
    let d = input.len();
    stage.sample_chunked(classes.len(), config, rng, |range, chunk_rng| {
        let levels = alloc::vec![a; range.len()];
        let cond = lowres_condition(&lowres[range.start * d..range.end * d], input, factor, &levels, chunk_rng)?;
        Ok(Conditioning::classes(&classes[range]).with_lowres(cond, levels))
    })
}

/// Sampling settings of one cascade stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSampling {
    pub sampler: SamplerConfig,
    /// Augmentation level applied to the stage's conditioning input.
    #[serde(default)]
    pub aug_level: f64,
}

/// Base model followed by super-resolution stages, each with its own
/// sampling settings.
#[derive(Clone, Debug)]
pub struct CascadeModel {
    pub base: DiffusionModel,
    pub base_sampler: SamplerConfig,
    pub stages: Vec<(DiffusionModel, StageSampling)>,
}

impl CascadeModel {
    /// Checks that every stage consumes the previous stage's output shape.
    pub fn validate(&self) -> Result<()> {
        if self.base.is_super_resolution() {
            return Err(Error::config("cascade base must not be a super-resolution stage"));
        }
        let mut shape = self.base.spec().output_shape();
        for (i, (stage, s)) in self.stages.iter().enumerate() {
            if stage.spec().input_shape() != Some(shape) {
                return Err(Error::config(alloc::format!(
                    "stage {} expects {:?} but receives {shape:?}",
                    i + 1,
                    stage.spec().input_shape()
                )));
            }
            if stage.class_count() != self.base.class_count() {
                return Err(Error::config("cascade stages disagree on the class table"));
            }
            if !(0.0..=1.0).contains(&s.aug_level) {
                return Err(Error::OutOfRange(alloc::format!("augmentation level {}", s.aug_level)));
            }
            shape = stage.spec().output_shape();
        }
        Ok(())
    }

    pub fn output_shape(&self) -> ItemShape {
        self.stages.last().map_or(self.base.spec().output_shape(), |(s, _)| s.spec().output_shape())
    }

    pub fn class_count(&self) -> usize {
        self.base.class_count()
    }
}

/// Base samples for `classes`, passed through every SR stage in order.
pub fn cascade_sample(cascade: &CascadeModel, classes: &[usize], rng: &mut SeededRng) -> Result<Vec<f32>> {
    cascade.validate()?;
    let mut x = cascade.base.sample(classes, &cascade.base_sampler, rng)?;
    for (stage, s) in &cascade.stages {
        x = sr_sample(stage, &x, classes, &s.sampler, s.aug_level, rng)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::ModelSpec;
    use crate::diffusion::{DenoiserConfig, ScheduleKind};

    #[test]
    fn augmentation_arithmetic() {
        let rng = &mut SeededRng::new(1, 0);
        let z = [0.5f32, -1.0, 0.25];
        assert_eq!(noise_augment(&z, 0.0, rng).unwrap(), (z.to_vec(), 0.0));
        assert!((aug_alpha_bar(0.5) - 0.5).abs() < 1e-15);
        let (mut a, mut b) = (SeededRng::new(3, 0), SeededRng::new(3, 0));
        let (aug, level) = noise_augment(&z, 0.5, &mut a).unwrap();
        assert_eq!(level, 0.5);
        for (&got, &zi) in aug.iter().zip(&z) {
            let want = (zi as f64 + b.normal()) / 2f64.sqrt();
            assert!((got as f64 - want).abs() < 1e-6);
        }
        assert!(noise_augment(&z, 1.5, rng).is_err());
        assert!(noise_augment(&z, -0.1, rng).is_err());
    }

    #[test]
    fn full_augmentation_is_unit_noise() {
        let rng = &mut SeededRng::new(8, 0);
        let z: Vec<f32> = (0..10_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (aug, _) = noise_augment(&z, 1.0, rng).unwrap();
        let mean = aug.iter().map(|&v| v as f64).sum::<f64>() / aug.len() as f64;
        let var = aug.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / aug.len() as f64;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() <= 0.05, "mean {mean} var {var}");
    }

    fn tiny_cascade(seed: u64) -> CascadeModel {
        let rng = &mut SeededRng::new(seed, 0);
        let base = ModelSpec::base(DenoiserConfig::unet(8, 3, 2, [4, 8]), ScheduleKind::cosine(), 20);
        let sr = ModelSpec::super_resolution(DenoiserConfig::unet(16, 3, 2, [4, 8]), ScheduleKind::cosine(), 20, 2);
        CascadeModel {
            base: DiffusionModel::new(base, rng).unwrap(),
            base_sampler: SamplerConfig::ddim(4).with_guidance(1.25),
            stages: alloc::vec![(
                DiffusionModel::new(sr, rng).unwrap(),
                StageSampling { sampler: SamplerConfig::ddpm(4), aug_level: 0.0 }
            )],
        }
    }

    #[test]
    fn cascade_chains_shapes_deterministically() {
        let c = tiny_cascade(2);
        assert_eq!(c.output_shape(), ItemShape::image(16, 3));
        let a = cascade_sample(&c, &[0, 1, 1], &mut SeededRng::new(5, 0)).unwrap();
        let b = cascade_sample(&c, &[0, 1, 1], &mut SeededRng::new(5, 0)).unwrap();
        assert_eq!(a.len(), 3 * 16 * 16 * 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(a, cascade_sample(&c, &[0, 1, 1], &mut SeededRng::new(6, 0)).unwrap());
    }

    #[test]
    fn sr_sample_checks_resolution() {
        let c = tiny_cascade(3);
        let stage = &c.stages[0].0;
        let cfg = SamplerConfig::ddpm(2);
        let rng = &mut SeededRng::new(0, 0);
        assert!(sr_sample(stage, &[0.0; 16 * 16 * 3], &[0], &cfg, 0.0, rng).is_err());
        assert!(sr_sample(stage, &[0.0; 8 * 8 * 3], &[0], &cfg, 1.2, rng).is_err());
        assert!(sr_sample(&c.base, &[0.0; 4 * 4 * 3], &[0], &cfg, 0.0, rng).is_err());
        let out = sr_sample(stage, &[0.0; 8 * 8 * 3], &[0], &cfg, 0.3, rng).unwrap();
        assert_eq!(out.len(), 16 * 16 * 3);
        let mut broken = tiny_cascade(3);
        broken.stages.push(broken.stages[0].clone());
        assert!(broken.validate().is_err());
    }
}
