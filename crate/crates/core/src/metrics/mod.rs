//! Sample-quality metrics: Gaussian feature statistics and FID, the
//! Inception Score analog, per-class accuracy and Pareto frontiers.

mod features;
mod fid;
mod scores;

pub use features::{FeatureExtractor, MetricRecord};
pub use fid::{fid, fit_stats, GaussianStats};
pub use scores::{inception_score, pareto_frontier, per_class_accuracy, Direction};

/// Default number of chunks for the Inception Score.
pub const DEFAULT_IS_SPLITS: usize = 5;
