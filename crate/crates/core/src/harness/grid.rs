use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffusion::{SamplerConfig, SamplerKind};
use crate::{Error, Result};

/// Which cascade stage a sweep varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSelector {
    #[default]
    Base,
    Sr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    FidTrain,
    FidVal,
    Is,
    Cas,
}

/// Cartesian grid over sampling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub stage: StageSelector,
    #[serde(default = "ddpm")]
    pub sampler: SamplerKind,
    pub guidance: Vec<f64>,
    pub log_variance: Vec<f64>,
    /// Noise-conditioning augmentation levels; only meaningful for `sr`.
    #[serde(default = "zero_level")]
    pub aug_levels: Vec<f64>,
    pub steps: Vec<usize>,
    pub metrics: Vec<MetricKind>,
}

fn ddpm() -> SamplerKind {
    SamplerKind::Ddpm
}

fn zero_level() -> Vec<f64> {
    alloc::vec![0.0]
}

/// One point of a [`SweepGrid`]; `index` is its position in row-major
/// order over (guidance, log-variance, augmentation, steps).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub guidance: f64,
    pub log_variance: f64,
    pub aug_level: f64,
    pub steps: usize,
}

impl SweepCell {
    pub fn sampler(&self, kind: SamplerKind) -> SamplerConfig {
        let base = match kind {
            SamplerKind::Ddpm => SamplerConfig::ddpm(self.steps),
            SamplerKind::Ddim => SamplerConfig::ddim(self.steps),
        };
        base.with_guidance(self.guidance).with_log_variance(self.log_variance)
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.guidance.is_empty()
            || self.log_variance.is_empty()
            || self.aug_levels.is_empty()
            || self.steps.is_empty()
            || self.metrics.is_empty()
        {
            return Err(Error::config("every sweep list must be nonempty"));
        }
        if let Some(w) = self.guidance.iter().find(|w| !(**w >= 1.0 && w.is_finite())) {
            return Err(Error::OutOfRange(alloc::format!("guidance weight {w}")));
        }
        for (name, list) in [("log-variance coefficient", &self.log_variance), ("augmentation level", &self.aug_levels)] {
            if let Some(v) = list.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange(alloc::format!("{name} {v}")));
            }
        }
        if self.steps.contains(&0) {
            return Err(Error::OutOfRange("step count 0".into()));
        }
        if self.stage == StageSelector::Base && self.aug_levels.iter().any(|&a| a != 0.0) {
            return Err(Error::config("augmentation levels apply to super-resolution sweeps only"));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.guidance.len() * self.log_variance.len() * self.aug_levels.len() * self.steps.len()
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::with_capacity(self.cell_count());
        for &guidance in &self.guidance {
            for &log_variance in &self.log_variance {
                for &aug_level in &self.aug_levels {
                    for &steps in &self.steps {
                        out.push(SweepCell { index: out.len(), guidance, log_variance, aug_level, steps });
                    }
                }
            }
        }
        out
    }

    pub fn wants(&self, metric: MetricKind) -> bool {
        self.metrics.contains(&metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn reference_grid() -> SweepGrid {
        SweepGrid {
            stage: StageSelector::Base,
            sampler: SamplerKind::Ddpm,
            guidance: vec![1.0, 1.25, 1.5, 1.75, 2.0, 5.0],
            log_variance: vec![0.0, 0.2, 0.3, 0.4, 1.0],
            aug_levels: vec![0.0],
            steps: vec![128, 500, 1000],
            metrics: vec![MetricKind::FidTrain, MetricKind::Is],
        }
    }

    #[test]
    fn grid_products() {
        let g = reference_grid();
        g.validate().unwrap();
        assert_eq!(g.cells().len(), 90);
        let sr = SweepGrid {
            stage: StageSelector::Sr,
            guidance: vec![1.0, 2.0, 5.0, 10.0, 30.0],
            log_variance: vec![0.1, 0.3],
            aug_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            steps: vec![100],
            ..g.clone()
        };
        sr.validate().unwrap();
        assert_eq!(sr.cell_count(), 50);
        let cells = g.cells();
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
        assert_eq!((cells[1].steps, cells[3].log_variance, cells[15].guidance), (500, 0.2, 1.25));
    }

    #[test]
    fn grid_validation() {
        let bad = [
            SweepGrid { guidance: vec![], ..reference_grid() },
            SweepGrid { guidance: vec![0.5], ..reference_grid() },
            SweepGrid { log_variance: vec![1.5], ..reference_grid() },
            SweepGrid { steps: vec![0], ..reference_grid() },
            SweepGrid { aug_levels: vec![0.2], ..reference_grid() },
            SweepGrid { metrics: vec![], ..reference_grid() },
        ];
        assert!(bad.iter().all(|g| g.validate().is_err()));
    }
}
