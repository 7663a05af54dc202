use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{map_labels, DiffusionModel};
use super::sr::{lowres_condition, sr_sample};
use crate::datasets::{downsample, LabeledDataset};
use crate::diffusion::{training_loss, Conditioning, SamplerConfig, DEFAULT_COND_DROPOUT};
use crate::metrics::{fid, FeatureExtractor};
use crate::numerics::optim::{clip_global_norm, Optimizer, OptimizerConfig};
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Momentum SGD at a fixed learning rate on the denoising loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_cond_dropout")]
    pub cond_dropout: f64,
    /// Global gradient-norm ceiling.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Super-resolution training draws augmentation levels from `[0, max_aug_level]`.
    #[serde(default = "default_max_aug")]
    pub max_aug_level: f64,
    /// Decay of an exponential moving average of the weights. When set, the
    /// trained model (and every fine-tuning snapshot) carries the averaged
    /// weights; optimisation itself proceeds on the raw weights.
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_cond_dropout() -> f64 {
    DEFAULT_COND_DROPOUT
}

fn default_max_aug() -> f64 {
    0.5
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, lr: f64) -> Self {
        Self {
            steps,
            batch_size,
            lr,
            momentum: default_momentum(),
            cond_dropout: default_cond_dropout(),
            grad_clip: None,
            max_aug_level: default_max_aug(),
            ema_decay: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(alloc::format!("learning rate {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(alloc::format!("momentum {}", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) || !(0.0..=1.0).contains(&self.max_aug_level) {
            return Err(Error::config("condition dropout and augmentation range must lie in [0, 1]"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("gradient clip must be positive"));
        }
        if self.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return Err(Error::config("EMA decay must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Loss of the optimizer step numbered `step` (counting from 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

struct Trainer<'a> {
    data: &'a LabeledDataset,
    ids: Vec<usize>,
    config: &'a TrainConfig,
    optimizer: Optimizer<f32>,
    batches: SeededRng,
    noise: SeededRng,
    ema: Option<Vec<f32>>,
    step: usize,
}

impl<'a> Trainer<'a> {
    fn new(
        model: &DiffusionModel,
        data: &'a LabeledDataset,
        class_map: &[usize],
        config: &'a TrainConfig,
        rng: &SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        if data.shape() != model.spec().output_shape() {
            return Err(Error::shape(model.spec().output_shape(), data.shape()));
        }
        if data.is_empty() && config.steps > 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let ids = map_labels(data, class_map, model.class_count())?;
        let optimizer = Optimizer::new(OptimizerConfig::momentum(config.momentum), model.params());
        let ema = config.ema_decay.map(|_| model.params().flatten());
        Ok(Self { data, ids, config, optimizer, batches: rng.substream(0), noise: rng.substream(1), ema, step: 0 })
    }

    fn batch(&mut self, model: &DiffusionModel) -> Result<(Vec<f32>, Conditioning<f32>)> {
        let b = self.config.batch_size;
        let picks: Vec<usize> = (0..b).map(|_| self.batches.below(self.data.len())).collect();
        let mut x0 = Vec::with_capacity(b * self.data.shape().len());
        for &i in &picks {
            x0.extend_from_slice(self.data.item(i));
        }
        let classes: Vec<usize> = picks.iter().map(|&i| self.ids[i]).collect();
        let cond = Conditioning::classes(&classes);
        let spec = model.spec();
        let (Some(input), Some(factor)) = (spec.input_shape(), spec.sr_factor) else {
            return Ok((x0, cond));
        };
        let mut lowres = Vec::with_capacity(b * input.len());
        for item in x0.chunks(self.data.shape().len()) {
            lowres.extend(downsample(item, self.data.shape(), factor)?);
        }
        let levels: Vec<f64> = (0..b).map(|_| self.batches.uniform_in(0.0, self.config.max_aug_level)).collect();
        let up = lowres_condition(&lowres, input, factor, &levels, &mut self.noise)?;
        Ok((x0, cond.with_lowres(up, levels)))
    }

    fn run(&mut self, model: &mut DiffusionModel, steps: usize, history: &mut Vec<LossRecord>) -> Result<()> {
        for _ in 0..steps {
            self.step += 1;
            let (x0, cond) = self.batch(model)?;
            let step = self.step;
            let renumber = |e: Error| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step },
                other => other,
            };
            let (loss, mut grads) =
                training_loss(model.denoiser(), &x0, &cond, model.schedule(), self.config.cond_dropout, &mut self.noise)
                    .map_err(renumber)?;
            if let Some(c) = self.config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            self.optimizer.step(model.params_mut(), &grads, self.config.lr);
            if let (Some(ema), Some(decay)) = (self.ema.as_mut(), self.config.ema_decay) {
                let decay = decay as f32;
                for (e, &p) in ema.iter_mut().zip(&model.params().flatten()) {
                    *e = decay * *e + (1.0 - decay) * p;
                }
            }
            history.push(LossRecord { step, loss });
        }
        Ok(())
    }

    /// The model as evaluated: `model` itself, or a copy carrying the
    /// averaged weights.
    fn snapshot(&self, model: &DiffusionModel) -> Result<DiffusionModel> {
        let mut snap = model.clone();
        if let Some(ema) = &self.ema {
            snap.params_mut().load_flat(ema)?;
        }
        Ok(snap)
    }
}

/// Trains `model` on the whole labelled corpus and returns the per-step
/// loss history. Corpus labels index the class table directly.
pub fn pretrain(
    model: &mut DiffusionModel,
    corpus: &LabeledDataset,
    config: &TrainConfig,
    rng: &SeededRng,
) -> Result<Vec<LossRecord>> {
    let mut trainer = Trainer::new(model, corpus, &[], config, rng)?;
    let mut history = Vec::with_capacity(config.steps);
    trainer.run(model, config.steps, &mut history)?;
    *model = trainer.snapshot(model)?;
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    /// Samples generated per checkpoint for FID selection.
    pub selection_samples: usize,
    pub selection_sampler: SamplerConfig,
    /// Class-table row of each target label; empty keeps labels as they are.
    #[serde(default)]
    pub class_map: Vec<usize>,
    /// Augmentation level when a super-resolution stage samples for selection.
    #[serde(default)]
    pub selection_aug_level: f64,
}

impl FinetuneConfig {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        self.train.validate()?;
        if self.checkpoint_every == 0 || self.checkpoint_every > self.train.steps {
            return Err(Error::config(alloc::format!(
                "checkpoint interval {} outside 1..={}",
                self.checkpoint_every,
                self.train.steps
            )));
        }
        if self.selection_samples <= feature_dim {
            return Err(Error::InsufficientSamples { needed: feature_dim + 1, got: self.selection_samples });
        }
        Ok(())
    }

    /// Steps at which checkpoints are taken; the final step always is one.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (1..=self.train.steps / self.checkpoint_every).map(|k| k * self.checkpoint_every).collect();
        if steps.last() != Some(&self.train.steps) {
            steps.push(self.train.steps);
        }
        steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub fid: f64,
    /// Smallest FID among this and all earlier checkpoints.
    pub running_min: f64,
}

/// Per-checkpoint FID table and the chosen step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub checkpoints: Vec<CheckpointRecord>,
    pub best_step: usize,
    pub best_fid: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub best: DiffusionModel,
    pub selection: Selection,
    pub losses: Vec<LossRecord>,
}

/// Selection samples for a snapshot: balanced over the target classes for
/// a base model, or conditioned on downsampled reference items for a
/// super-resolution stage.
fn selection_samples(
    snapshot: &DiffusionModel,
    reference: &LabeledDataset,
    config: &FinetuneConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f32>> {
    let n = config.selection_samples;
    let targets = reference.class_count();
    let to_id = |y: usize| if config.class_map.is_empty() { y } else { config.class_map[y] };
    match (snapshot.spec().sr_factor, snapshot.spec().input_shape()) {
        (Some(factor), Some(input)) => {
            if reference.is_empty() {
                return Err(Error::InsufficientSamples { needed: 1, got: 0 });
            }
            let mut lowres = Vec::with_capacity(n * input.len());
            let mut classes = Vec::with_capacity(n);
            for k in 0..n {
                let i = k % reference.len();
                lowres.extend(downsample(reference.item(i), reference.shape(), factor)?);
                classes.push(to_id(reference.label(i)));
            }
            sr_sample(snapshot, &lowres, &classes, &config.selection_sampler, config.selection_aug_level, rng)
        }
        _ => {
            let classes: Vec<usize> = (0..n).map(|k| to_id(k % targets)).collect();
            snapshot.sample(&classes, &config.selection_sampler, rng)
        }
    }
}

/// Trains a copy of `model` on `target_train`, scoring a frozen snapshot at
/// every checkpoint by FID against `reference` in `extractor`'s feature
/// space, and returns the snapshot with the smallest FID.
///
/// Every checkpoint samples from the same random stream. `on_checkpoint`
/// sees each snapshot and its record as soon as it is scored.
pub fn finetune(
    model: &DiffusionModel,
    target_train: &LabeledDataset,
    config: &FinetuneConfig,
    reference: &LabeledDataset,
    extractor: &FeatureExtractor,
    rng: &SeededRng,
    mut on_checkpoint: impl FnMut(&CheckpointRecord, &DiffusionModel) -> Result<()>,
) -> Result<FinetuneOutcome> {
    config.validate(extractor.dim())?;
    if reference.shape() != model.spec().output_shape() {
        return Err(Error::shape(model.spec().output_shape(), reference.shape()));
    }
    map_labels(reference, &config.class_map, model.class_count())?;
    let reference_stats = extractor.stats(reference.data())?;
    let mut working = model.clone();
    let mut trainer = Trainer::new(&working, target_train, &config.class_map, &config.train, rng)?;
    let mut losses = Vec::with_capacity(config.train.steps);
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut best: Option<DiffusionModel> = None;
    for step in config.checkpoint_steps() {
        trainer.run(&mut working, step - trainer.step, &mut losses)?;
        let snapshot = trainer.snapshot(&working)?;
        let samples = selection_samples(&snapshot, reference, config, &mut rng.substream(2))?;
        let score = fid(&extractor.stats(&samples)?, &reference_stats)?;
        let prev = checkpoints.last().map_or(f64::INFINITY, |c| c.running_min);
        let record = CheckpointRecord { step, fid: score, running_min: prev.min(score) };
        on_checkpoint(&record, &snapshot)?;
        if score < prev || best.is_none() {
            best = Some(snapshot);
        }
        checkpoints.push(record);
    }
    let best = best.ok_or_else(|| Error::contract("fine-tuning produced no checkpoint"))?;
    let floor = checkpoints.last().map_or(f64::INFINITY, |c| c.running_min);
    let chosen = *checkpoints
        .iter()
        .find(|c| c.fid == floor)
        .ok_or_else(|| Error::contract("no checkpoint attains the minimum FID"))?;
    Ok(FinetuneOutcome {
        best,
        selection: Selection { checkpoints, best_step: chosen.step, best_fid: chosen.fid },
        losses,
    })
}
