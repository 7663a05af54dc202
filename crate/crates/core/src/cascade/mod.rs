//! Diffusion stages with their schedules, super-resolution with
//! noise-conditioning augmentation, cascaded sampling, and the
//! pretrain-then-finetune workflow with FID-based checkpoint selection.

mod model;
mod sr;
mod train;

pub use crate::datasets::upsample;
pub use model::{DiffusionModel, ModelSpec, SAMPLE_CHUNK};
pub use sr::{aug_alpha_bar, cascade_sample, noise_augment, sr_sample, CascadeModel, StageSampling};
pub use train::{
    finetune, pretrain, CheckpointRecord, FinetuneConfig, FinetuneOutcome, LossRecord, Selection, TrainConfig,
};
