use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::{ItemShape, LabeledDataset};
use crate::diffusion::{build_schedule, sample, Conditioning, Denoiser, DenoiserConfig, NoiseSchedule, SamplerConfig, ScheduleKind};
use crate::harness::fingerprint_with_params;
use crate::numerics::{ParamSet, SeededRng};
use crate::{Error, Result};

/// Items per reverse-chain batch. Each chunk draws from its own substream,
/// so outputs do not depend on how many items are requested at once beyond
/// their position.
pub const SAMPLE_CHUNK: usize = 256;

/// Everything needed to rebuild a diffusion stage from its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleKind,
    pub timesteps: usize,
    /// Upsampling factor of a super-resolution stage; `None` for a base model.
    #[serde(default)]
    pub sr_factor: Option<usize>,
}

impl ModelSpec {
    pub fn base(denoiser: DenoiserConfig, schedule: ScheduleKind, timesteps: usize) -> Self {
        Self { denoiser, schedule, timesteps, sr_factor: None }
    }

    pub fn super_resolution(mut denoiser: DenoiserConfig, schedule: ScheduleKind, timesteps: usize, factor: usize) -> Self {
        denoiser.lowres_conditioning = true;
        Self { denoiser, schedule, timesteps, sr_factor: Some(factor) }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        if self.timesteps == 0 {
            return Err(Error::config("a diffusion stage needs at least one timestep"));
        }
        match self.sr_factor {
            None if self.denoiser.lowres_conditioning => {
                Err(Error::config("low-resolution conditioning requires an upsampling factor"))
            }
            None => Ok(()),
            Some(f) => {
                if !self.denoiser.lowres_conditioning {
                    return Err(Error::config("a super-resolution stage needs low-resolution conditioning"));
                }
                if f != 2 && f != 4 {
                    return Err(Error::config(alloc::format!("unsupported upsampling factor {f}")));
                }
                match self.denoiser.item_shape {
                    ItemShape::Image { height, width, .. } if height % f == 0 && width % f == 0 => Ok(()),
                    s => Err(Error::config(alloc::format!("factor {f} does not divide output shape {s:?}"))),
                }
            }
        }
    }

    pub fn output_shape(&self) -> ItemShape {
        self.denoiser.item_shape
    }

    /// Shape of the low-resolution input of a super-resolution stage.
    pub fn input_shape(&self) -> Option<ItemShape> {
        let f = self.sr_factor?;
        match self.denoiser.item_shape {
            ItemShape::Image { height, width, channels } => {
                Some(ItemShape::Image { height: height / f, width: width / f, channels })
            }
            ItemShape::Vector { .. } => None,
        }
    }
}

/// A trainable ε-prediction network with its noise schedule.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    spec: ModelSpec,
    denoiser: Denoiser<f32>,
    schedule: NoiseSchedule,
}

impl DiffusionModel {
    pub fn new(spec: ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let schedule = build_schedule(&spec.schedule, spec.timesteps)?;
        let denoiser = Denoiser::new(spec.denoiser.clone(), rng)?;
        Ok(Self { spec, denoiser, schedule })
    }

    pub fn from_params(spec: ModelSpec, flat: &[f32]) -> Result<Self> {
        let mut model = Self::new(spec, &mut SeededRng::new(0, 0))?;
        model.denoiser.params_mut().load_flat(flat)?;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn denoiser(&self) -> &Denoiser<f32> {
        &self.denoiser
    }

    pub fn params(&self) -> &ParamSet<f32> {
        self.denoiser.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        self.denoiser.params_mut()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn class_count(&self) -> usize {
        self.spec.denoiser.class_count
    }

    pub fn is_super_resolution(&self) -> bool {
        self.spec.sr_factor.is_some()
    }

    /// Hash of the spec and every parameter bit.
    pub fn fingerprint(&self) -> alloc::string::String {
        fingerprint_with_params(&self.spec, &self.params().flatten())
    }

    /// Samples one item per entry of `classes` from a base model.
    ///
    /// Draws one value from `rng` to seed the run, then generates chunks of
    /// [`SAMPLE_CHUNK`] items on independent substreams.
    pub fn sample(&self, classes: &[usize], config: &SamplerConfig, rng: &mut SeededRng) -> Result<Vec<f32>> {
        if self.is_super_resolution() {
            return Err(Error::contract("super-resolution stages sample through sr_sample"));
        }
        self.sample_chunked(classes.len(), config, rng, |range, _| Ok(Conditioning::classes(&classes[range])))
    }

    pub(crate) fn sample_chunked(
        &self,
        n: usize,
        config: &SamplerConfig,
        rng: &mut SeededRng,
        mut cond: impl FnMut(core::ops::Range<usize>, &mut SeededRng) -> Result<Conditioning<f32>>,
    ) -> Result<Vec<f32>> {
        config.validate(self.schedule.len())?;
        let tag = rand::RngCore::next_u64(rng);
        let root = rng.substream(tag).substream(config.stream);
        let mut out = Vec::with_capacity(n * self.spec.output_shape().len());
        for (k, start) in (0..n).step_by(SAMPLE_CHUNK).enumerate() {
            let mut chunk_rng = root.substream(k as u64);
            let c = cond(start..n.min(start + SAMPLE_CHUNK), &mut chunk_rng)?;
            out.extend(sample(&self.denoiser, &c, &self.schedule, config, &mut chunk_rng)?);
        }
        Ok(out)
    }
}

/// Checks that every label of `data` maps into the embedding table and
/// returns the mapped ids. An empty `class_map` is the identity.
pub(crate) fn map_labels(data: &LabeledDataset, class_map: &[usize], table: usize) -> Result<Vec<usize>> {
    let lookup = |y: usize| -> Result<usize> {
        let id = if class_map.is_empty() {
            y
        } else {
            *class_map
                .get(y)
                .ok_or_else(|| Error::OutOfRange(alloc::format!("label {y} has no entry in the class map")))?
        };
        if id >= table {
            return Err(Error::OutOfRange(alloc::format!("class id {id} for an embedding table of {table}")));
        }
        Ok(id)
    };
    data.labels().iter().map(|&y| lookup(y as usize)).collect()
}
