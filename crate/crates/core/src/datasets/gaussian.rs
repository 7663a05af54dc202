use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Provenance, Split};
use super::ItemShape;
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Classes `N(μ_c, s² I)` in `d` dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianWorldConfig {
    pub class_count: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl GaussianWorldConfig {
    /// Class `c` centred at `± separation` on axis `c / 2 (mod d)`.
    pub fn axis_aligned(class_count: usize, dim: usize, separation: f64, std: f64, train: usize, val: usize) -> Self {
        let means = (0..class_count)
            .map(|c| {
                let mut m = alloc::vec![0.0; dim];
                if dim > 0 {
                    m[(c / 2) % dim] = if c % 2 == 0 { -separation } else { separation };
                }
                m
            })
            .collect();
        Self { class_count, dim, means, std, train_per_class: train, val_per_class: val }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("gaussian world needs at least two classes"));
        }
        if self.dim < 1 {
            return Err(Error::config("gaussian world needs dimension >= 1"));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::config("gaussian world std must be positive"));
        }
        if self.means.len() != self.class_count || self.means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::config("one mean of length dim per class required"));
        }
        Ok(())
    }
}

fn draw(config: &GaussianWorldConfig, per_class: usize, split: Split, rng: &mut SeededRng) -> Result<LabeledDataset> {
    let mut data = Vec::with_capacity(config.class_count * per_class * config.dim);
    let mut labels = Vec::with_capacity(config.class_count * per_class);
    for (c, mean) in config.means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|m| (m + config.std * rng.normal()) as f32));
            labels.push(c as u32);
        }
    }
    LabeledDataset::new(ItemShape::Vector { dim: config.dim }, config.class_count, data, labels, split, Provenance::Real)
}

/// Draws the train and validation splits from independent substreams.
pub fn make_gaussian_world(config: &GaussianWorldConfig, rng: &SeededRng) -> Result<(LabeledDataset, LabeledDataset)> {
    config.validate()?;
    let train = draw(config, config.train_per_class, Split::Train, &mut rng.substream(0))?;
    let val = draw(config, config.val_per_class, Split::Val, &mut rng.substream(1))?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn counts_mean_and_determinism() {
        let cfg = GaussianWorldConfig {
            class_count: 2,
            dim: 2,
            means: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            std: 1.0,
            train_per_class: 10_000,
            val_per_class: 100,
        };
        let (train, val) = make_gaussian_world(&cfg, &SeededRng::new(1, 0)).unwrap();
        assert_eq!(train.class_counts(), [10_000, 10_000]);
        assert_eq!(val.class_counts(), [100, 100]);
        for k in 0..2 {
            let m: f64 = (0..10_000).map(|i| train.item(i)[k] as f64).sum::<f64>() / 10_000.0;
            assert!((m - cfg.means[0][k]).abs() < 0.05, "coordinate {k}: {m}");
        }
        let (again, _) = make_gaussian_world(&cfg, &SeededRng::new(1, 0)).unwrap();
        assert_eq!(train, again);
        let mut bad = cfg.clone();
        bad.std = 0.0;
        assert!(make_gaussian_world(&bad, &SeededRng::new(1, 0)).is_err());
    }
}
