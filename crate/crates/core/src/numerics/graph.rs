//! Define-by-run tape for reverse-mode gradients over the handful of layer
//! types the denoisers and classifiers use. Images are NHWC.
//!
//! A `Graph` is single-owner: build it, call [`Graph::backward`] once, drop it.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::{ParamId, ParamSet};
use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'p, T> {
    Owned(Vec<T>),
    Borrowed(&'p [T]),
}

impl<T> Value<'_, T> {
    fn as_slice(&self) -> &[T] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, cols: Option<Vec<T>>, geom: ConvGeom },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<T>, rstd: Vec<T> },
    Silu(Var),
    Relu(Var),
    Add(Var, Var),
    AddRows { x: Var, v: Var },
    Scale(Var, T),
    Reshape(Var),
    Embedding { table: Var, ids: Vec<usize> },
    AvgPool2 { x: Var, h: usize, w: usize, c: usize },
    Upsample2 { x: Var, h: usize, w: usize, c: usize },
    GlobalAvgPool { x: Var, spatial: usize, c: usize },
    Dropout { x: Var, mask: Vec<T> },
    SquaredError { pred: Var, target: Vec<T>, items: usize },
    CrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<usize>, smoothing: T },
    Sum(Var),
    SumSquares(Var),
}

struct Node<'p, T> {
    value: Value<'p, T>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
}

/// Parameter gradients produced by [`Graph::backward`], indexed like the
/// [`ParamSet`] they were computed against.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self { grads: params.iter().map(|p| Some(vec![T::zero(); p.len()])).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.index()).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Concatenation in parameter order; absent gradients are zeros.
    pub fn flatten(&self, params: &ParamSet<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(params.total_len());
        for (i, p) in params.iter().enumerate() {
            match self.grads.get(i).and_then(|g| g.as_ref()) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(core::iter::repeat_n(T::zero(), p.len())),
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().flat_map(|g| g.iter()).map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'p, T: Real> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value: Value::Owned(value), shape, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Var {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "input shape/data mismatch");
        self.push(data, shape, Op::Input, false)
    }

    pub fn param(&mut self, params: &'p ParamSet<T>, id: ParamId) -> Var {
        let t = params.get(id);
        self.nodes.push(Node {
            value: Value::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x[N, in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, din) = (self.shape(x)[0], self.shape(x)[1]);
        let (wi, dout) = (self.shape(w)[0], self.shape(w)[1]);
        assert_eq!(din, wi, "linear: input width {din} vs weight rows {wi}");
        let mut out = vec![T::zero(); n * dout];
        T::gemm(n, din, dout, self.value(x), false, self.value(w), false, &mut out, false);
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, vec![n, dout], Op::Linear { x, w, b }, ng)
    }

    /// Stride-1 "same" convolution with a `k x k` kernel (k odd) on NHWC
    /// input; weights are `[k*k*cin, cout]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, k: usize) -> Var {
        let s = self.shape(x);
        let (n, h, wd, cin) = (s[0], s[1], s[2], s[3]);
        let cout = self.shape(w)[1];
        assert_eq!(self.shape(w)[0], k * k * cin, "conv weight shape");
        let rows = n * h * wd;
        let kk = k * k * cin;
        let cols = if k == 1 { None } else { Some(im2col(self.value(x), n, h, wd, cin, k)) };
        let mut out = vec![T::zero(); rows * cout];
        {
            let lhs = cols.as_deref().unwrap_or(self.value(x));
            T::gemm(rows, kk, cout, lhs, false, self.value(w), false, &mut out, false);
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let geom = ConvGeom { n, h, w: wd, cin, cout, k };
        self.push(out, vec![n, h, wd, cout], Op::Conv { x, w, b, cols, geom }, ng)
    }

    /// Group normalization over `[N, spatial..., C]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        const EPS: f64 = 1e-5;
        let shape = self.shape(x).to_vec();
        let n = shape[0];
        let c = *shape.last().unwrap();
        assert!(c % groups == 0, "channels {c} not divisible by groups {groups}");
        let spatial = shape[1..shape.len() - 1].iter().product::<usize>();
        let cg = c / groups;
        let m = T::of((spatial * cg) as f64);
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); n * groups];
        for ni in 0..n {
            let base = ni * spatial * c;
            for g in 0..groups {
                let mut mean = T::zero();
                for s in 0..spatial {
                    for ch in g * cg..(g + 1) * cg {
                        mean += xv[base + s * c + ch];
                    }
                }
                mean /= m;
                let mut var = T::zero();
                for s in 0..spatial {
                    for ch in g * cg..(g + 1) * cg {
                        let d = xv[base + s * c + ch] - mean;
                        var += d * d;
                    }
                }
                var /= m;
                let r = T::one() / (var + T::of(EPS)).sqrt();
                rstd[ni * groups + g] = r;
                for s in 0..spatial {
                    for ch in g * cg..(g + 1) * cg {
                        let i = base + s * c + ch;
                        let xh = (xv[i] - mean) * r;
                        xhat[i] = xh;
                        out[i] = xh * gv[ch] + bv[ch];
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(out, shape, Op::GroupNorm { x, gamma, beta, groups, xhat, rstd }, ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(out, shape, Op::Silu(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(out, shape, Op::Relu(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, shape, Op::Add(a, b), ng)
    }

    /// Adds a per-item channel vector `v[N, C]` to every position of
    /// `x[N, ..., C]`.
    pub fn add_rows(&mut self, x: Var, v: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (n, c) = (shape[0], *shape.last().unwrap());
        assert_eq!(self.shape(v), &[n, c], "add_rows: broadcast shape");
        let per_item = self.value(x).len() / n;
        let vv = self.value(v);
        let mut out = self.value(x).to_vec();
        for ni in 0..n {
            let row = &vv[ni * c..(ni + 1) * c];
            for px in out[ni * per_item..(ni + 1) * per_item].chunks_mut(c) {
                px.iter_mut().zip(row).for_each(|(o, &r)| *o += r);
            }
        }
        let ng = self.ng(x) || self.ng(v);
        self.push(out, shape, Op::AddRows { x, v }, ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(out, shape, Op::Scale(x, s), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), self.value(x).len(), "reshape size");
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        self.push(out, shape, Op::Reshape(x), ng)
    }

    /// Row gather from `table[R, D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, d) = (self.shape(table)[0], self.shape(table)[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < rows, "embedding id {id} out of range {rows}");
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let ng = self.ng(table);
        self.push(out, vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() }, ng)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = vec![T::zero(); n * ho * wo * c];
        let quarter = T::of(0.25);
        for ni in 0..n {
            for i in 0..ho {
                for j in 0..wo {
                    let o = ((ni * ho + i) * wo + j) * c;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((ni * h + 2 * i + di) * w + 2 * j + dj) * c;
                        for ch in 0..c {
                            out[o + ch] += xv[src + ch] * quarter;
                        }
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, vec![n, ho, wo, c], Op::AvgPool2 { x, h, w, c }, ng)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h * 2, w * 2);
        let xv = self.value(x);
        let mut out = vec![T::zero(); n * ho * wo * c];
        for ni in 0..n {
            for i in 0..ho {
                for j in 0..wo {
                    let src = ((ni * h + i / 2) * w + j / 2) * c;
                    let dst = ((ni * ho + i) * wo + j) * c;
                    out[dst..dst + c].copy_from_slice(&xv[src..src + c]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, vec![n, ho, wo, c], Op::Upsample2 { x, h, w, c }, ng)
    }

    /// Mean over spatial positions: `[N, ..., C] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (n, c) = (s[0], *s.last().unwrap());
        let spatial = self.value(x).len() / (n * c);
        let inv = T::one() / T::of(spatial as f64);
        let xv = self.value(x);
        let mut out = vec![T::zero(); n * c];
        for ni in 0..n {
            for px in xv[ni * spatial * c..(ni + 1) * spatial * c].chunks(c) {
                out[ni * c..(ni + 1) * c].iter_mut().zip(px).for_each(|(o, &v)| *o += v * inv);
            }
        }
        let ng = self.ng(x);
        self.push(out, vec![n, c], Op::GlobalAvgPool { x, spatial, c }, ng)
    }

    /// Inverted dropout with a caller-supplied keep mask (entries 0 or 1).
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Var {
        let scale = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = keep.iter().map(|&k| if k { scale } else { T::zero() }).collect();
        assert_eq!(mask.len(), self.value(x).len(), "dropout mask size");
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(out, shape, Op::Dropout { x, mask }, ng)
    }

    /// `Σ (pred − target)² / items`, i.e. the per-item squared norm
    /// averaged over the leading (batch) dimension.
    pub fn squared_error(&mut self, pred: Var, target: Vec<T>) -> Var {
        assert_eq!(self.value(pred).len(), target.len(), "squared_error size");
        let items = self.shape(pred)[0];
        let sum: T = self.value(pred).iter().zip(&target).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let ng = self.ng(pred);
        self.push(vec![sum / T::of(items as f64)], vec![1], Op::SquaredError { pred, target, items }, ng)
    }

    /// Mean label-smoothed cross entropy of `logits[N, C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Var {
        let (n, c) = (self.shape(logits)[0], self.shape(logits)[1]);
        assert_eq!(targets.len(), n, "cross_entropy targets");
        let lv = self.value(logits);
        let eps = T::of(smoothing);
        let uniform = eps / T::of(c as f64);
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for ni in 0..n {
            let row = &lv[ni * c..(ni + 1) * c];
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let logz = z.ln() + mx;
            for ci in 0..c {
                probs[ni * c + ci] = (row[ci] - logz).exp();
                let q = uniform + if ci == targets[ni] { T::one() - eps } else { T::zero() };
                total -= q * (row[ci] - logz);
            }
        }
        let smoothing = eps;
        let ng = self.ng(logits);
        let op = Op::CrossEntropy { logits, probs, targets: targets.to_vec(), smoothing };
        self.push(vec![total / T::of(n as f64)], vec![1], op, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(vec![s], vec![1], Op::Sum(x), ng)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|&v| v * v).sum();
        let ng = self.ng(x);
        self.push(vec![s], vec![1], Op::SumSquares(x), ng)
    }

    /// Reverse pass from a scalar node. Returns gradients for every
    /// parameter referenced by the graph, sized against `params`.
    pub fn backward(self, loss: Var, params: &ParamSet<T>) -> Gradients<T> {
        assert_eq!(self.nodes[loss.0].shape, [1], "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients { grads: (0..params.len()).map(|_| None).collect() };

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut out.grads[id.index()], gy),
                Op::Linear { x, w, b } => {
                    let (n, din) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                    let dout = self.nodes[w.0].shape[1];
                    if self.ng(*w) {
                        let mut dw = vec![T::zero(); din * dout];
                        T::gemm(din, n, dout, self.value(*x), true, &gy, false, &mut dw, false);
                        accumulate(&mut grads[w.0], dw);
                    }
                    if let Some(b) = b.filter(|b| self.ng(*b)) {
                        accumulate(&mut grads[b.0], column_sums(&gy, dout));
                    }
                    if self.ng(*x) {
                        let mut dx = vec![T::zero(); n * din];
                        T::gemm(n, dout, din, &gy, false, self.value(*w), true, &mut dx, false);
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Conv { x, w, b, cols, geom } => {
                    let ConvGeom { n, h, w: wd, cin, cout, k } = *geom;
                    let rows = n * h * wd;
                    let kk = k * k * cin;
                    let lhs = cols.as_deref().unwrap_or(self.value(*x));
                    if self.ng(*w) {
                        let mut dw = vec![T::zero(); kk * cout];
                        T::gemm(kk, rows, cout, lhs, true, &gy, false, &mut dw, false);
                        accumulate(&mut grads[w.0], dw);
                    }
                    if let Some(b) = b.filter(|b| self.ng(*b)) {
                        accumulate(&mut grads[b.0], column_sums(&gy, cout));
                    }
                    if self.ng(*x) {
                        let mut dcols = vec![T::zero(); rows * kk];
                        T::gemm(rows, cout, kk, &gy, false, self.value(*w), true, &mut dcols, false);
                        let dx = if k == 1 { dcols } else { col2im(&dcols, n, h, wd, cin, k) };
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::GroupNorm { x, gamma, beta, groups, xhat, rstd } => {
                    let shape = &self.nodes[x.0].shape;
                    let n = shape[0];
                    let c = *shape.last().unwrap();
                    let spatial = xhat.len() / (n * c);
                    let cg = c / groups;
                    let gv = self.value(*gamma);
                    if self.ng(*gamma) || self.ng(*beta) {
                        let mut dg = vec![T::zero(); c];
                        let mut db = vec![T::zero(); c];
                        for (i, (&g, &xh)) in gy.iter().zip(xhat).enumerate() {
                            dg[i % c] += g * xh;
                            db[i % c] += g;
                        }
                        accumulate(&mut grads[gamma.0], dg);
                        accumulate(&mut grads[beta.0], db);
                    }
                    if self.ng(*x) {
                        let m = T::of((spatial * cg) as f64);
                        let mut dx = vec![T::zero(); gy.len()];
                        for ni in 0..n {
                            let base = ni * spatial * c;
                            for g in 0..*groups {
                                let mut sum_d = T::zero();
                                let mut sum_dx = T::zero();
                                for s in 0..spatial {
                                    for ch in g * cg..(g + 1) * cg {
                                        let i = base + s * c + ch;
                                        let d = gy[i] * gv[ch];
                                        sum_d += d;
                                        sum_dx += d * xhat[i];
                                    }
                                }
                                let r = rstd[ni * groups + g];
                                for s in 0..spatial {
                                    for ch in g * cg..(g + 1) * cg {
                                        let i = base + s * c + ch;
                                        let d = gy[i] * gv[ch];
                                        dx[i] = r / m * (m * d - sum_d - xhat[i] * sum_dx);
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Silu(x) => {
                    let dx = self
                        .value(*x)
                        .iter()
                        .zip(&gy)
                        .map(|(&v, &g)| {
                            let s = sigmoid(v);
                            g * s * (T::one() + v * (T::one() - s))
                        })
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Relu(x) => {
                    let dx = self
                        .value(*x)
                        .iter()
                        .zip(&gy)
                        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Add(a, b) => {
                    if self.ng(*a) && self.ng(*b) {
                        accumulate(&mut grads[a.0], gy.clone());
                        accumulate(&mut grads[b.0], gy);
                    } else if self.ng(*a) {
                        accumulate(&mut grads[a.0], gy);
                    } else if self.ng(*b) {
                        accumulate(&mut grads[b.0], gy);
                    }
                }
                Op::AddRows { x, v } => {
                    if self.ng(*v) {
                        let (n, c) = (self.nodes[v.0].shape[0], self.nodes[v.0].shape[1]);
                        let per_item = gy.len() / n;
                        let mut dv = vec![T::zero(); n * c];
                        for ni in 0..n {
                            for px in gy[ni * per_item..(ni + 1) * per_item].chunks(c) {
                                dv[ni * c..(ni + 1) * c].iter_mut().zip(px).for_each(|(o, &g)| *o += g);
                            }
                        }
                        accumulate(&mut grads[v.0], dv);
                    }
                    if self.ng(*x) {
                        accumulate(&mut grads[x.0], gy);
                    }
                }
                Op::Scale(x, s) => {
                    let dx = gy.iter().map(|&g| g * *s).collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Reshape(x) => accumulate(&mut grads[x.0], gy),
                Op::Embedding { table, ids } => {
                    let (rows, d) = (self.nodes[table.0].shape[0], self.nodes[table.0].shape[1]);
                    let mut dt = vec![T::zero(); rows * d];
                    for (r, &id) in ids.iter().enumerate() {
                        dt[id * d..(id + 1) * d].iter_mut().zip(&gy[r * d..(r + 1) * d]).for_each(|(o, &g)| *o += g);
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::AvgPool2 { x, h, w, c } => {
                    let (h, w, c) = (*h, *w, *c);
                    let n = self.nodes[x.0].shape[0];
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter = T::of(0.25);
                    let mut dx = vec![T::zero(); n * h * w * c];
                    for ni in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                let src = ((ni * ho + i / 2) * wo + j / 2) * c;
                                let dst = ((ni * h + i) * w + j) * c;
                                for ch in 0..c {
                                    dx[dst + ch] = gy[src + ch] * quarter;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Upsample2 { x, h, w, c } => {
                    let (h, w, c) = (*h, *w, *c);
                    let n = self.nodes[x.0].shape[0];
                    let (ho, wo) = (h * 2, w * 2);
                    let mut dx = vec![T::zero(); n * h * w * c];
                    for ni in 0..n {
                        for i in 0..ho {
                            for j in 0..wo {
                                let src = ((ni * ho + i) * wo + j) * c;
                                let dst = ((ni * h + i / 2) * w + j / 2) * c;
                                for ch in 0..c {
                                    dx[dst + ch] += gy[src + ch];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::GlobalAvgPool { x, spatial, c } => {
                    let (spatial, c) = (*spatial, *c);
                    let n = self.nodes[x.0].shape[0];
                    let inv = T::one() / T::of(spatial as f64);
                    let mut dx = vec![T::zero(); n * spatial * c];
                    for ni in 0..n {
                        for s in 0..spatial {
                            for ch in 0..c {
                                dx[(ni * spatial + s) * c + ch] = gy[ni * c + ch] * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = gy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::SquaredError { pred, target, items } => {
                    let k = gy[0] * T::of(2.0) / T::of(*items as f64);
                    let dx = self.value(*pred).iter().zip(target).map(|(&p, &t)| k * (p - t)).collect();
                    accumulate(&mut grads[pred.0], dx);
                }
                Op::CrossEntropy { logits, probs, targets, smoothing } => {
                    let (n, c) = (self.nodes[logits.0].shape[0], self.nodes[logits.0].shape[1]);
                    let k = gy[0] / T::of(n as f64);
                    let uniform = *smoothing / T::of(c as f64);
                    let mut dx = vec![T::zero(); n * c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let q = uniform + if ci == targets[ni] { T::one() - *smoothing } else { T::zero() };
                            dx[ni * c + ci] = k * (probs[ni * c + ci] - q);
                        }
                    }
                    accumulate(&mut grads[logits.0], dx);
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    accumulate(&mut grads[x.0], vec![gy[0]; len]);
                }
                Op::SumSquares(x) => {
                    let two = T::of(2.0) * gy[0];
                    let dx = self.value(*x).iter().map(|&v| two * v).collect();
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }
        out
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

fn column_sums<T: Real>(m: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in m.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
    }
    out
}

fn im2col<T: Real>(x: &[T], n: usize, h: usize, w: usize, c: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let kk = k * k * c;
    let mut cols = vec![T::zero(); n * h * w * kk];
    for ni in 0..n {
        for i in 0..h {
            for j in 0..w {
                let row = ((ni * h + i) * w + j) * kk;
                for di in 0..k {
                    let si = i as isize + di as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let sj = j as isize + dj as isize - pad;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let src = ((ni * h + si as usize) * w + sj as usize) * c;
                        let dst = row + (di * k + dj) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], n: usize, h: usize, w: usize, c: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let kk = k * k * c;
    let mut x = vec![T::zero(); n * h * w * c];
    for ni in 0..n {
        for i in 0..h {
            for j in 0..w {
                let row = ((ni * h + i) * w + j) * kk;
                for di in 0..k {
                    let si = i as isize + di as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let sj = j as isize + dj as isize - pad;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let dst = ((ni * h + si as usize) * w + sj as usize) * c;
                        let src = row + (di * k + dj) * c;
                        x[dst..dst + c].iter_mut().zip(&cols[src..src + c]).for_each(|(o, &v)| *o += v);
                    }
                }
            }
        }
    }
    x
}
