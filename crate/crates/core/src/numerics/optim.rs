use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamSet, Real};
use num_traits::Float;

/// Optimizer choice and hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// Heavy-ball momentum with L2 weight decay.
    Momentum { momentum: f64, weight_decay: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerConfig {
    pub fn momentum(momentum: f64) -> Self {
        OptimizerConfig::Momentum { momentum, weight_decay: 0.0 }
    }

    pub fn adam() -> Self {
        OptimizerConfig::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Stateful optimizer bound to one parameter set layout.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &ParamSet<T>) -> Self {
        let first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        let second = match config {
            OptimizerConfig::Adam { .. } => params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            OptimizerConfig::Momentum { .. } => Vec::new(),
        };
        Self { config, first, second, steps: 0 }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>, lr: f64) {
        self.steps += 1;
        let lr_t = T::of(lr);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id).data_mut();
            match self.config {
                OptimizerConfig::Momentum { momentum, weight_decay } => {
                    let (mu, wd) = (T::of(momentum), T::of(weight_decay));
                    for ((w, &gi), v) in p.iter_mut().zip(g).zip(&mut self.first[i]) {
                        let d = gi + wd * *w;
                        *v = mu * *v + d;
                        *w -= lr_t * *v;
                    }
                }
                OptimizerConfig::Adam { beta1, beta2, eps, weight_decay } => {
                    let (b1, b2) = (T::of(beta1), T::of(beta2));
                    let c1 = T::of(1.0 - beta1.powi(self.steps as i32));
                    let c2 = T::of(1.0 - beta2.powi(self.steps as i32));
                    let (eps, wd) = (T::of(eps), T::of(weight_decay));
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((w, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let d = gi + wd * *w;
                        *mi = b1 * *mi + (T::one() - b1) * d;
                        *vi = b2 * *vi + (T::one() - b2) * d * d;
                        *w -= lr_t * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Rescales gradients so their global norm does not exceed `max_norm`.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
}
