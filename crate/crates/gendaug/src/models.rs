//! Pretraining and fine-tuning drivers that read data directories and
//! write model directories.
//!
//! A stage directory is either a plain model directory or a fine-tuning
//! output with `selection.json`; a generator directory holds `base/` and
//! optionally `sr/`.

use std::path::{Path, PathBuf};

use gendaug_core::cascade::{finetune, pretrain, DiffusionModel, LossRecord, Selection, StageSampling};
use gendaug_core::diffusion::SamplerConfig;
use gendaug_core::harness::Generator;
use gendaug_core::metrics::FeatureExtractor;
use gendaug_core::numerics::SeededRng;

use crate::checkpoint::{checkpoint_dir, load_diffusion, load_selected, save_diffusion, save_selection};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::world::{at_shape, load_reference, load_split, load_world, train_reference};

pub const STAGES: [&str; 2] = ["base", "sr"];

/// Loads the model a stage directory stands for.
pub fn resolve_stage(dir: &Path) -> Result<DiffusionModel> {
    if dir.join("selection.json").exists() {
        load_selected(dir)
    } else if dir.join("model.json").exists() {
        load_diffusion(dir)
    } else {
        Err(Error::format(dir, "neither selection.json nor model.json found"))
    }
}

/// Base model and optional super-resolution stage of a generator directory.
pub struct Stages {
    pub base: DiffusionModel,
    pub sr: Option<DiffusionModel>,
}

impl Stages {
    pub fn load(dir: &Path) -> Result<Self> {
        let base = resolve_stage(&dir.join("base"))?;
        let sr_dir = dir.join("sr");
        let sr = if sr_dir.exists() { Some(resolve_stage(&sr_dir)?) } else { None };
        Ok(Self { base, sr })
    }

    /// Generator with the configured samplers; the SR stage defaults to
    /// 100 DDPM steps at augmentation level 0.
    pub fn generator(&self, config: &RunConfig) -> Generator<'_> {
        let base_sampler = config.sampler.clone().unwrap_or_else(|| SamplerConfig::ddpm(self.base.spec().timesteps));
        let mut g = Generator::base(&self.base, base_sampler);
        if let Some(sr) = &self.sr {
            let s = config.sr_sampler.clone().unwrap_or(StageSampling {
                sampler: SamplerConfig::ddpm(100.min(sr.spec().timesteps)),
                aug_level: 0.0,
            });
            g.stages.push((sr, s));
        }
        g
    }
}

fn write_losses(path: &Path, losses: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in losses {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

fn stage_spec<'a>(config: &'a RunConfig, stage: &str) -> Result<Option<&'a gendaug_core::cascade::ModelSpec>> {
    Ok(match stage {
        "base" => Some(config.section(&config.base, "base")?),
        _ => config.sr.as_ref(),
    })
}

/// Trains every configured stage on the pretraining split and writes
/// `<out>/<stage>/` plus its `loss.csv`.
pub fn run_pretrain(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let train = config.section(&config.pretrain, "pretrain")?;
    let corpus = load_split(data_dir, "pretrain")?;
    let mut written = Vec::new();
    for (k, stage) in STAGES.iter().enumerate() {
        let Some(spec) = stage_spec(config, stage)? else { continue };
        let root = SeededRng::new(config.seed, 0).substream(100 + k as u64);
        let mut model = DiffusionModel::new(spec.clone(), &mut root.substream(0))?;
        let data = at_shape(&corpus, spec.output_shape())?;
        let losses = pretrain(&mut model, &data, train, &root.substream(1))?;
        let dir = out.join(stage);
        save_diffusion(&dir, &model)?;
        write_losses(&dir.join("loss.csv"), &losses)?;
        written.push(dir);
    }
    Ok(written)
}

/// Reference network for a stage's resolution, trained once and cached.
pub fn stage_reference(config: &RunConfig, data_dir: &Path, model: &DiffusionModel, dir: &Path) -> Result<FeatureExtractor> {
    if dir.join("model.json").exists() || dir.join("identity.json").exists() {
        return load_reference(dir);
    }
    train_reference(data_dir, config.reference.as_ref(), model.spec().output_shape(), config.seed, dir)
}

/// Fine-tunes the base stage (and the SR stage when configured) on the
/// target training split, selecting checkpoints by FID on the validation
/// split. `init` is a generator directory, or `None` to train from a fresh
/// initialization with the same budget.
pub fn run_finetune(config: &RunConfig, data_dir: &Path, init: Option<&Path>, out: &Path) -> Result<Vec<Selection>> {
    let section = config.section(&config.finetune, "finetune")?;
    let world = load_world(data_dir)?;
    let (train, val) = (load_split(data_dir, "train")?, load_split(data_dir, "val")?);
    let mut selections = Vec::new();
    for (k, stage) in STAGES.iter().enumerate() {
        let ft = match *stage {
            "base" => &section.base,
            _ => match &section.sr {
                Some(ft) => ft,
                None => continue,
            },
        };
        let root = SeededRng::new(config.seed, 0).substream(200 + k as u64);
        let model = match init {
            Some(dir) => resolve_stage(&dir.join(stage))?,
            None => {
                let spec = stage_spec(config, stage)?.ok_or_else(|| Error::Config(format!("no [{stage}] model section")))?;
                DiffusionModel::new(spec.clone(), &mut root.substream(0))?
            }
        };
        let shape = model.spec().output_shape();
        let reference = stage_reference(config, data_dir, &model, &out.join(format!("reference_{stage}")))?;
        let mut ft = ft.clone();
        if ft.class_map.is_empty() {
            ft.class_map = world.class_map.clone();
        }
        let dir = out.join(stage);
        let outcome = finetune(
            &model,
            &at_shape(&train, shape)?,
            &ft,
            &at_shape(&val, shape)?,
            &reference,
            &root.substream(1),
            |rec, snapshot| save_diffusion(&checkpoint_dir(&dir, rec.step), snapshot).map_err(core_error),
        )?;
        save_selection(&dir, &outcome.selection)?;
        write_losses(&dir.join("loss.csv"), &outcome.losses)?;
        selections.push(outcome.selection);
    }
    Ok(selections)
}

fn core_error(e: Error) -> gendaug_core::Error {
    match e {
        Error::Core(c) => c,
        other => gendaug_core::Error::Contract(other.to_string()),
    }
}
