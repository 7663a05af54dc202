use alloc::vec::Vec;

use super::model::{check_batch, Conditioning, Denoiser, EpsilonModel};
use super::NoiseSchedule;
use crate::numerics::{Gradients, Graph, Real, SeededRng};
use crate::{Error, Result};
use num_traits::Float;

/// `x_t = √ᾱ_t x0 + √(1 − ᾱ_t) ε`. `t = 0` returns `x0`.
pub fn forward_sample<T: Real>(x0: &[T], t: usize, eps: &[T], schedule: &NoiseSchedule) -> Result<Vec<T>> {
    if t > schedule.len() {
        return Err(Error::OutOfRange(alloc::format!("timestep {t} of {}", schedule.len())));
    }
    forward_mix(x0, schedule.alpha_bar(t), eps)
}

/// Affine signal/noise mix at an explicit ᾱ.
pub fn forward_mix<T: Real>(x0: &[T], alpha_bar: f64, eps: &[T]) -> Result<Vec<T>> {
    if x0.len() != eps.len() {
        return Err(Error::shape(x0.len(), eps.len()));
    }
    let (a, b) = (T::of(alpha_bar.sqrt()), T::of((1.0 - alpha_bar).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// One draw of the denoising objective's randomness for a batch.
#[derive(Clone, Debug)]
pub struct NoisedBatch<T> {
    pub x_t: Vec<T>,
    pub t: Vec<usize>,
    pub eps: Vec<T>,
    pub cond: Conditioning<T>,
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` per item, forms `x_t`, and
/// replaces each class by the null token with probability `cond_dropout`.
pub fn noise_batch<T: Real>(
    x0: &[T],
    cond: &Conditioning<T>,
    schedule: &NoiseSchedule,
    cond_dropout: f64,
    rng: &mut SeededRng,
) -> Result<NoisedBatch<T>> {
    if !(0.0..=1.0).contains(&cond_dropout) {
        return Err(Error::OutOfRange(alloc::format!("condition dropout {cond_dropout}")));
    }
    let n = cond.len();
    if n == 0 || x0.len() % n != 0 {
        return Err(Error::shape(alloc::format!("{n} items"), x0.len()));
    }
    let d = x0.len() / n;
    let mut x_t = Vec::with_capacity(x0.len());
    let mut eps = alloc::vec![T::zero(); x0.len()];
    let mut t = Vec::with_capacity(n);
    let mut classes = cond.classes.clone();
    for i in 0..n {
        let ti = 1 + rng.below(schedule.len());
        t.push(ti);
        rng.fill_normal(&mut eps[i * d..(i + 1) * d]);
        x_t.extend(forward_sample(&x0[i * d..(i + 1) * d], ti, &eps[i * d..(i + 1) * d], schedule)?);
        if rng.bernoulli(cond_dropout) {
            classes[i] = None;
        }
    }
    let cond = Conditioning { classes, ..cond.clone() };
    Ok(NoisedBatch { x_t, t, eps, cond })
}

fn mean_squared_norm<T: Real>(pred: &[T], eps: &[T], n: usize) -> f64 {
    pred.iter().zip(eps).map(|(&p, &e)| (p - e).as_f64().powi(2)).sum::<f64>() / n as f64
}

/// Value of `mean_i ‖ε_i − ε_θ(x_t, t, class)‖²` for any ε-model.
pub fn diffusion_loss<T: Real, M: EpsilonModel<T> + ?Sized>(
    model: &M,
    x0: &[T],
    cond: &Conditioning<T>,
    schedule: &NoiseSchedule,
    cond_dropout: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    check_batch(model.item_shape(), model.class_count(), x0, &alloc::vec![1; cond.len()], cond)?;
    let b = noise_batch(x0, cond, schedule, cond_dropout, rng)?;
    let pred = model.predict_epsilon(&b.x_t, &b.t, &b.cond)?;
    let loss = mean_squared_norm(&pred, &b.eps, cond.len());
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    Ok(loss)
}

/// Denoising loss and its parameter gradients for a trainable denoiser.
/// A non-finite loss is reported as [`Error::NonFiniteLoss`] with step 0;
/// training loops substitute their own step counter.
pub fn training_loss<T: Real>(
    model: &Denoiser<T>,
    x0: &[T],
    cond: &Conditioning<T>,
    schedule: &NoiseSchedule,
    cond_dropout: f64,
    rng: &mut SeededRng,
) -> Result<(f64, Gradients<T>)> {
    let shape = model.config().item_shape;
    let n = check_batch(shape, model.config().class_count, x0, &alloc::vec![1; cond.len()], cond)?;
    let b = noise_batch(x0, cond, schedule, cond_dropout, rng)?;
    let mut g = Graph::new();
    let x = g.input(shape.batch_dims(n), b.x_t);
    let pred = model.forward(&mut g, x, &b.t, &b.cond);
    let loss = g.squared_error(pred, b.eps);
    let value = g.value(loss)[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let grads = g.backward(loss, model.params());
    if !grads.all_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_schedule, DenoiserConfig, ScheduleKind};
    use alloc::vec;

    #[test]
    fn forward_sample_arithmetic() {
        let s = NoiseSchedule::from_betas(vec![0.36]).unwrap();
        let x = forward_sample(&[1.0f64], 1, &[0.5], &s).unwrap();
        assert!((x[0] - 1.1).abs() < 1e-12);
        assert_eq!(forward_sample(&[0.25f64], 0, &[3.0], &s).unwrap(), [0.25]);
        assert!(forward_sample(&[0.0f64, 1.0], 1, &[0.0], &s).is_err());
        assert!(forward_sample(&[0.0f64], 2, &[0.0], &s).is_err());
    }

    #[test]
    fn forward_variance_monte_carlo() {
        let s = build_schedule(&ScheduleKind::cosine(), 50).unwrap();
        let t = 20;
        let mut rng = SeededRng::new(3, 0);
        let mut eps = vec![0.0f64; 10_000];
        rng.fill_normal(&mut eps);
        let x = forward_sample(&vec![0.0; eps.len()], t, &eps, &s).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((var / (1.0 - s.alpha_bar(t)) - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn full_dropout_ignores_labels() {
        let s = build_schedule(&ScheduleKind::linear(), 20).unwrap();
        let d = Denoiser::<f64>::new(DenoiserConfig::mlp(2, 3, 8), &mut SeededRng::new(1, 0)).unwrap();
        let x0 = vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6];
        let a = training_loss(&d, &x0, &Conditioning::classes(&[0, 1, 2]), &s, 1.0, &mut SeededRng::new(9, 0)).unwrap();
        let b = training_loss(&d, &x0, &Conditioning::classes(&[2, 0, 1]), &s, 1.0, &mut SeededRng::new(9, 0)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.flatten(d.params()), b.1.flatten(d.params()));
    }
}
