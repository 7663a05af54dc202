use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use num_traits::Float;

/// How the per-step variances are laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// β linear between endpoints given for a 1000-step reference chain
    /// and rescaled by `1000 / T`.
    Linear { beta_start: f64, beta_end: f64 },
    /// ᾱ_t = cos²((t/T + s)/(1 + s) · π/2) / cos²(s π / (2(1 + s))).
    Cosine { offset: f64 },
    /// Explicit β_1..β_T.
    Explicit { betas: Vec<f64> },
}

impl ScheduleKind {
    pub fn linear() -> Self {
        ScheduleKind::Linear { beta_start: 1e-4, beta_end: 0.02 }
    }

    pub fn cosine() -> Self {
        ScheduleKind::Cosine { offset: 0.008 }
    }
}

const MAX_BETA: f64 = 0.999;

/// Discrete forward-process schedule, indexed `t = 1..=T` with ᾱ_0 = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Builds a schedule of `steps` steps.
pub fn build_schedule(kind: &ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::config("schedule needs at least one step"));
    }
    let t_max = steps as f64;
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear { beta_start, beta_end } => {
            let scale = 1000.0 / t_max;
            let (lo, hi) = (beta_start * scale, (beta_end * scale).min(MAX_BETA));
            (0..steps)
                .map(|i| if steps == 1 { lo } else { lo + (hi - lo) * i as f64 / (t_max - 1.0) })
                .collect()
        }
        ScheduleKind::Cosine { offset } => {
            let f = |t: f64| {
                let c = ((t / t_max + offset) / (1.0 + offset) * core::f64::consts::FRAC_PI_2).cos();
                c * c
            };
            (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(0.0, MAX_BETA)).collect()
        }
        ScheduleKind::Explicit { betas } => {
            if betas.len() != steps {
                return Err(Error::config(alloc::format!(
                    "explicit schedule has {} betas for {steps} steps",
                    betas.len()
                )));
            }
            betas.clone()
        }
    };
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config(alloc::format!("beta_{} = {b} outside (0, 1)", i + 1)));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// T.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t; zero at t = 1.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Schedule over a strictly increasing subsequence `t_1 < … < t_S` of
    /// this schedule's timesteps with β'_i = 1 − ᾱ_{t_i} / ᾱ_{t_{i−1}}, so
    /// the respaced chain has the same marginals at the kept steps.
    pub fn respaced(&self, timesteps: &[usize]) -> Result<Self> {
        let mut prev = 0usize;
        let mut betas = Vec::with_capacity(timesteps.len());
        for &t in timesteps {
            if t <= prev || t > self.len() {
                return Err(Error::config("respacing timesteps must be increasing within 1..=T"));
            }
            betas.push(1.0 - self.alpha_bar(t) / self.alpha_bar(prev));
            prev = t;
        }
        Self::from_betas(betas)
    }
}

/// `steps` timesteps spread uniformly over `1..=T`, always including `1`
/// and `T`, in increasing order.
pub fn uniform_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::config(alloc::format!("cannot pick {steps} of {total} timesteps")));
    }
    if steps == 1 {
        return Ok(alloc::vec![total]);
    }
    let span = (total - 1) as f64;
    let out: Vec<usize> =
        (0..steps).map(|i| 1 + (span * i as f64 / (steps - 1) as f64 + 0.5) as usize).collect();
    debug_assert!(out.windows(2).all(|w| w[0] < w[1]));
    Ok(out)
}
