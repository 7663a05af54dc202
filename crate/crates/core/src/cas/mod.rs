//! Classifiers, their training recipes, the classification accuracy score
//! and real-plus-generated augmentation experiments.

mod classifier;
mod protocol;
mod train;

pub use classifier::{top_k_accuracy, ClassifierArch, ClassifierConfig, ClassifierModel};
pub use protocol::{
    augmentation_cell, augmentation_experiment, cas, cas_with_model, fill_deltas, generation_budget, summarize, AugmentationRow,
    AugmentationSummary, CasRecord, Preprocess,
};
pub use train::{evaluate, train_classifier, CropPolicy, EpochRecord, LrDecay, TrainRecipe};
