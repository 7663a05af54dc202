use alloc::vec::Vec;

use super::model::{check_batch, Conditioning, EpsilonModel};
use super::NoiseSchedule;
use crate::datasets::ItemShape;
use crate::numerics::Real;
use crate::{Error, Result};
use num_traits::Float;

/// Exact `E[ε | x_t]` when `x0 ~ N(m, s² I)`:
/// `(x_t − √ᾱ_t m) √(1 − ᾱ_t) / (ᾱ_t s² + 1 − ᾱ_t)`.
pub fn analytic_epsilon_gaussian(
    x_t: &[f64],
    t: usize,
    mean: &[f64],
    std: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if !(std > 0.0) {
        return Err(Error::config("class std must be positive"));
    }
    if x_t.len() != mean.len() {
        return Err(Error::shape(mean.len(), x_t.len()));
    }
    if t < 1 || t > schedule.len() {
        return Err(Error::OutOfRange(alloc::format!("timestep {t}")));
    }
    let ab = schedule.alpha_bar(t);
    let k = (1.0 - ab).sqrt() / (ab * std * std + 1.0 - ab);
    let root = ab.sqrt();
    Ok(x_t.iter().zip(mean).map(|(&x, &m)| (x - root * m) * k).collect())
}

/// Bayes-optimal ε-predictor for a world of isotropic Gaussian classes with
/// a shared std. The null token gets the posterior of the equal-weight
/// mixture over all classes.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    means: Vec<Vec<f64>>,
    std: f64,
    schedule: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(means: Vec<Vec<f64>>, std: f64, schedule: NoiseSchedule) -> Result<Self> {
        let dim = means.first().map(Vec::len).unwrap_or(0);
        if means.is_empty() || dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::config("oracle needs at least one class mean of a common positive dimension"));
        }
        if !(std > 0.0) {
            return Err(Error::config("class std must be positive"));
        }
        Ok(Self { means, std, schedule })
    }

    fn mixture_epsilon(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let ab = self.schedule.alpha_bar(t);
        let var = ab * self.std * self.std + 1.0 - ab;
        let root = ab.sqrt();
        let logits: Vec<f64> = self
            .means
            .iter()
            .map(|m| -x.iter().zip(m).map(|(&xi, &mi)| (xi - root * mi).powi(2)).sum::<f64>() / (2.0 * var))
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut out = alloc::vec![0.0; x.len()];
        for (m, w) in self.means.iter().zip(&weights) {
            let e = analytic_epsilon_gaussian(x, t, m, self.std, &self.schedule)?;
            out.iter_mut().zip(e).for_each(|(o, ei)| *o += w / total * ei);
        }
        Ok(out)
    }
}

impl<T: Real> EpsilonModel<T> for GaussianOracle {
    fn item_shape(&self) -> ItemShape {
        ItemShape::Vector { dim: self.means[0].len() }
    }

    fn class_count(&self) -> usize {
        self.means.len()
    }

    fn predict_epsilon(&self, x_t: &[T], t: &[usize], cond: &Conditioning<T>) -> Result<Vec<T>> {
        check_batch(EpsilonModel::<T>::item_shape(self), self.means.len(), x_t, t, cond)?;
        let d = self.means[0].len();
        let mut out = Vec::with_capacity(x_t.len());
        for (i, class) in cond.classes.iter().enumerate() {
            let x: Vec<f64> = x_t[i * d..(i + 1) * d].iter().map(|v| v.as_f64()).collect();
            let e = match class {
                Some(c) => analytic_epsilon_gaussian(&x, t[i], &self.means[*c], self.std, &self.schedule)?,
                None => self.mixture_epsilon(&x, t[i])?,
            };
            out.extend(e.into_iter().map(T::of));
        }
        Ok(out)
    }
}
