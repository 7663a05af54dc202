use alloc::vec::Vec;

use super::{LabeledDataset, Provenance};
use crate::numerics::SeededRng;
use crate::{Error, Result};
use num_traits::Float;

/// Generated items to add per class for `multiplier × real_count`; the
/// product must be a whole number.
pub fn generated_quota(real_count: usize, multiplier: f64) -> Result<usize> {
    if !(multiplier >= 0.0 && multiplier.is_finite()) {
        return Err(Error::OutOfRange(alloc::format!("multiplier {multiplier}")));
    }
    let want = multiplier * real_count as f64;
    let rounded = (want + 0.5).floor();
    if (want - rounded).abs() > 1e-9 * want.max(1.0) {
        return Err(Error::config(alloc::format!(
            "multiplier {multiplier} x {real_count} items is not a whole count"
        )));
    }
    Ok(rounded as usize)
}

/// All real items plus `multiplier × (real count of c)` generated items of
/// every class `c`, interleaved by a seeded shuffle.
///
/// Generated items are taken in their stored order within each class.
/// `multiplier = 0` returns the real dataset unchanged.
pub fn mix_datasets(
    real: &LabeledDataset,
    generated: &LabeledDataset,
    multiplier: f64,
    rng: &mut SeededRng,
) -> Result<LabeledDataset> {
    if real.shape() != generated.shape() || real.class_count() != generated.class_count() {
        return Err(Error::shape(
            (real.shape(), real.class_count()),
            (generated.shape(), generated.class_count()),
        ));
    }
    let real_counts = real.class_counts();
    let quotas: Vec<usize> = real_counts.iter().map(|&n| generated_quota(n, multiplier)).collect::<Result<_>>()?;
    if multiplier == 0.0 {
        return Ok(real.clone());
    }
    if !generated.is_balanced() {
        return Err(Error::Imbalanced(alloc::format!("generated class counts {:?}", generated.class_counts())));
    }
    let available = generated.class_counts()[0];
    let needed = quotas.iter().copied().max().unwrap_or(0);
    if available < needed {
        return Err(Error::InsufficientSamples { needed, got: available });
    }
    let mut picks: Vec<usize> = Vec::with_capacity(quotas.iter().sum());
    for (c, &q) in quotas.iter().enumerate() {
        picks.extend(generated.indices_of(c).into_iter().take(q));
    }
    picks.sort_unstable();
    let chosen = generated.select(&picks);
    let joined = LabeledDataset::concat(&[real, &chosen], Provenance::Mixed)?;
    let mut order: Vec<usize> = (0..joined.len()).collect();
    rng.shuffle(&mut order);
    Ok(joined.select(&order))
}
