//! Parameter storage and the trainable layer types.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::{Real, SeededRng, Tensor};
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors. The order is the serialization order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites all values from a flat buffer in parameter order.
    pub fn load_flat(&mut self, flat: &[T]) -> crate::Result<()> {
        if flat.len() != self.total_len() {
            return Err(crate::Error::shape(self.total_len(), flat.len()));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

fn scaled_normal<T: Real>(shape: [usize; 2], fan_in: usize, gain: f64, rng: &mut SeededRng) -> Tensor<T> {
    let std = gain / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.normal() * std))
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, din: usize, dout: usize, rng: &mut SeededRng) -> Self {
        Self::with_gain(ps, name, din, dout, 1.0, rng)
    }

    pub fn with_gain<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        din: usize,
        dout: usize,
        gain: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let w = ps.add(alloc::format!("{name}.w"), scaled_normal([din, dout], din, gain, rng));
        let b = ps.add(alloc::format!("{name}.b"), Tensor::zeros([dout]));
        Self { w, b }
    }

    pub fn forward<'p, T: Real>(&self, g: &mut Graph<'p, T>, ps: &'p ParamSet<T>, x: Var) -> Var {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut SeededRng,
    ) -> Self {
        Self::with_gain(ps, name, cin, cout, k, 1.0, rng)
    }

    pub fn with_gain<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = k * k * cin;
        let w = ps.add(alloc::format!("{name}.w"), scaled_normal([fan_in, cout], fan_in, gain, rng));
        let b = ps.add(alloc::format!("{name}.b"), Tensor::zeros([cout]));
        Self { w, b, k }
    }

    pub fn forward<'p, T: Real>(&self, g: &mut Graph<'p, T>, ps: &'p ParamSet<T>, x: Var) -> Var {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.conv(x, w, Some(b), self.k)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, channels: usize, groups: usize) -> Self {
        let gamma = ps.add(alloc::format!("{name}.gamma"), Tensor::from_fn([channels], |_| T::one()));
        let beta = ps.add(alloc::format!("{name}.beta"), Tensor::zeros([channels]));
        Self { gamma, beta, groups }
    }

    pub fn forward<'p, T: Real>(&self, g: &mut Graph<'p, T>, ps: &'p ParamSet<T>, x: Var) -> Var {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, rows: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let table = ps.add(alloc::format!("{name}.table"), Tensor::from_fn([rows, dim], |_| T::of(rng.normal())));
        Self { table }
    }

    pub fn forward<'p, T: Real>(&self, g: &mut Graph<'p, T>, ps: &'p ParamSet<T>, ids: &[usize]) -> Var {
        let table = g.param(ps, self.table);
        g.embedding(table, ids)
    }
}

/// Sinusoidal features of a scalar position (timestep or augmentation
/// level), `[N, dim]` with sines in the first half and cosines in the
/// second.
pub fn sinusoidal_features<T: Real>(positions: &[f64], dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            out.push(T::of((p * freq).sin()));
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            out.push(T::of((p * freq).cos()));
        }
        for _ in 2 * half..dim {
            out.push(T::zero());
        }
    }
    out
}
