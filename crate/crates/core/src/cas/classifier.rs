use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::ItemShape;
use crate::numerics::layers::{Conv2d, Dense, GroupNorm};
use num_traits::Float;

use crate::numerics::{Graph, ParamSet, SeededRng, Var};
use crate::{Error, Result};

const INFERENCE_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierArch {
    /// Stem convolution, three stages of two pre-activation residual blocks
    /// (the last two stages start with a 2× average pool), global pooling.
    ResNet { widths: [usize; 3], groups: usize },
    /// One hidden ReLU layer.
    Mlp { hidden: usize },
}

impl ClassifierArch {
    pub fn resnet() -> Self {
        ClassifierArch::ResNet { widths: [16, 32, 64], groups: 4 }
    }

    /// ResNet for images, MLP with 64 hidden units for vectors.
    pub fn default_for(shape: ItemShape) -> Self {
        if shape.is_image() {
            Self::resnet()
        } else {
            ClassifierArch::Mlp { hidden: 64 }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub item_shape: ItemShape,
    pub class_count: usize,
    pub arch: ClassifierArch,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("classifier needs at least two classes"));
        }
        match (self.arch, self.item_shape) {
            (ClassifierArch::Mlp { hidden }, _) if hidden > 0 => Ok(()),
            (ClassifierArch::ResNet { widths, groups }, ItemShape::Image { height, width, .. }) => {
                if height % 4 != 0 || width % 4 != 0 {
                    return Err(Error::config("residual classifier needs sides divisible by 4"));
                }
                if groups == 0 || widths.iter().any(|&w| w == 0 || w % groups != 0) {
                    return Err(Error::config("classifier widths must be positive multiples of groups"));
                }
                Ok(())
            }
            (ClassifierArch::ResNet { .. }, ItemShape::Vector { .. }) => {
                Err(Error::config("residual classifier needs image items"))
            }
            _ => Err(Error::config("classifier hidden width must be positive")),
        }
    }

    /// Penultimate feature width.
    pub fn feature_dim(&self) -> usize {
        match self.arch {
            ClassifierArch::ResNet { widths, .. } => widths[2],
            ClassifierArch::Mlp { hidden } => hidden,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    proj: Option<Conv2d>,
}

impl Block {
    fn new(ps: &mut ParamSet<f32>, name: &str, cin: usize, cout: usize, groups: usize, rng: &mut SeededRng) -> Self {
        Self {
            norm1: GroupNorm::new(ps, &alloc::format!("{name}.norm1"), cin, groups),
            conv1: Conv2d::new(ps, &alloc::format!("{name}.conv1"), cin, cout, 3, rng),
            norm2: GroupNorm::new(ps, &alloc::format!("{name}.norm2"), cout, groups),
            conv2: Conv2d::with_gain(ps, &alloc::format!("{name}.conv2"), cout, cout, 3, 0.5, rng),
            proj: (cin != cout).then(|| Conv2d::new(ps, &alloc::format!("{name}.proj"), cin, cout, 1, rng)),
        }
    }

    fn forward<'p>(&self, g: &mut Graph<'p, f32>, ps: &'p ParamSet<f32>, x: Var) -> Var {
        let h = self.norm1.forward(g, ps, x);
        let h = g.relu(h);
        let skip = match &self.proj {
            Some(p) => p.forward(g, ps, h),
            None => x,
        };
        let h = self.conv1.forward(g, ps, h);
        let h = self.norm2.forward(g, ps, h);
        let h = g.relu(h);
        let h = self.conv2.forward(g, ps, h);
        g.add(h, skip)
    }
}

#[derive(Clone, Debug)]
enum Body {
    ResNet { stem: Conv2d, blocks: Vec<Block>, norm: GroupNorm },
    Mlp { hidden: Dense },
}

/// Image or vector classifier with an exposed penultimate feature layer.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    params: ParamSet<f32>,
    body: Body,
    head: Dense,
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let body = match config.arch {
            ClassifierArch::ResNet { widths, groups } => {
                let stem = Conv2d::new(&mut ps, "stem", config.item_shape.channels(), widths[0], 3, rng);
                let mut blocks = Vec::with_capacity(6);
                let mut cin = widths[0];
                for (s, &w) in widths.iter().enumerate() {
                    for b in 0..2 {
                        blocks.push(Block::new(&mut ps, &alloc::format!("stage{s}.block{b}"), cin, w, groups, rng));
                        cin = w;
                    }
                }
                let norm = GroupNorm::new(&mut ps, "final_norm", widths[2], groups);
                Body::ResNet { stem, blocks, norm }
            }
            ClassifierArch::Mlp { hidden } => {
                Body::Mlp { hidden: Dense::new(&mut ps, "hidden", config.item_shape.len(), hidden, rng) }
            }
        };
        let head = Dense::new(&mut ps, "head", config.feature_dim(), config.class_count, rng);
        Ok(Self { config, params: ps, body, head })
    }

    /// Rebuilds the layout for `config` and loads `params` into it.
    pub fn from_params(config: ClassifierConfig, params: &[f32]) -> Result<Self> {
        let mut model = Self::new(config, &mut SeededRng::new(0, 0))?;
        model.params.load_flat(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Builds `(features, logits)` for a batch input node. `dropout` is the
    /// keep mask source and drop probability applied to the features.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p, f32>,
        x: Var,
        dropout: Option<(f64, &mut SeededRng)>,
    ) -> (Var, Var) {
        let ps = &self.params;
        let features = match &self.body {
            Body::ResNet { stem, blocks, norm } => {
                let mut h = stem.forward(g, ps, x);
                for (i, block) in blocks.iter().enumerate() {
                    if i == 2 || i == 4 {
                        h = g.avg_pool2(h);
                    }
                    h = block.forward(g, ps, h);
                }
                let h = norm.forward(g, ps, h);
                let h = g.relu(h);
                g.global_avg_pool(h)
            }
            Body::Mlp { hidden } => {
                let h = hidden.forward(g, ps, x);
                g.relu(h)
            }
        };
        let head_in = match dropout {
            Some((p, rng)) if p > 0.0 => {
                let keep: Vec<bool> = (0..g.value(features).len()).map(|_| !rng.bernoulli(p)).collect();
                g.dropout(features, &keep, p)
            }
            _ => features,
        };
        let logits = self.head.forward(g, ps, head_in);
        (features, logits)
    }

    fn infer(&self, data: &[f32], want_features: bool) -> Result<Vec<f32>> {
        let item = self.config.item_shape.len();
        if data.len() % item != 0 {
            return Err(Error::shape(self.config.item_shape, data.len()));
        }
        let n = data.len() / item;
        let mut out = Vec::new();
        for start in (0..n).step_by(INFERENCE_BATCH) {
            let m = INFERENCE_BATCH.min(n - start);
            let mut g = Graph::new();
            let x = g.input(self.config.item_shape.batch_dims(m), data[start * item..(start + m) * item].to_vec());
            let (f, l) = self.forward(&mut g, x, None);
            out.extend_from_slice(g.value(if want_features { f } else { l }));
        }
        Ok(out)
    }

    /// Logits `[n, C]` for items stored back to back.
    pub fn logits(&self, data: &[f32]) -> Result<Vec<f32>> {
        self.infer(data, false)
    }

    /// Penultimate features `[n, F]`.
    pub fn features(&self, data: &[f32]) -> Result<Vec<f32>> {
        self.infer(data, true)
    }

    /// Softmax class probabilities `[n, C]` in double precision.
    pub fn probabilities(&self, data: &[f32]) -> Result<Vec<f64>> {
        let logits = self.logits(data)?;
        Ok(softmax_rows(&logits, self.config.class_count))
    }

    /// Arg-max class per item; ties go to the lowest class id.
    pub fn predict(&self, data: &[f32]) -> Result<Vec<usize>> {
        let c = self.config.class_count;
        Ok(self.logits(data)?.chunks(c).map(argmax).collect())
    }
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_rows(logits: &[f32], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(c) {
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let start = out.len();
        out.extend(row.iter().map(|&v| (v as f64 - mx).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|p| *p /= z);
    }
    out
}

/// Fraction of items whose label ranks within the top `k` logits, for each
/// requested `k`. Ranking breaks ties toward the lower class id, matching
/// [`ClassifierModel::predict`].
pub fn top_k_accuracy(logits: &[f32], labels: &[usize], class_count: usize, ks: &[usize]) -> Result<Vec<f64>> {
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > class_count) {
        return Err(Error::OutOfRange(alloc::format!("top-{k} for {class_count} classes")));
    }
    if logits.len() != labels.len() * class_count {
        return Err(Error::shape(labels.len() * class_count, logits.len()));
    }
    if labels.is_empty() {
        return Err(Error::contract("accuracy of an empty dataset"));
    }
    let mut hits = alloc::vec![0usize; ks.len()];
    for (row, &y) in logits.chunks(class_count).zip(labels) {
        if y >= class_count {
            return Err(Error::OutOfRange(alloc::format!("label {y} for {class_count} classes")));
        }
        let ly = row[y];
        let rank = row.iter().enumerate().filter(|&(j, &v)| v > ly || (v == ly && j < y)).count();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank < k {
                *h += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / labels.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn output_shapes_and_determinism() {
        let cfg = ClassifierConfig { item_shape: ItemShape::image(8, 3), class_count: 5, arch: ClassifierArch::resnet() };
        let m = ClassifierModel::new(cfg, &mut SeededRng::new(3, 0)).unwrap();
        let mut rng = SeededRng::new(0, 1);
        let mut x = vec![0.0f32; 3 * 8 * 8 * 3];
        rng.fill_normal(&mut x);
        let l = m.logits(&x).unwrap();
        assert_eq!(l.len(), 15);
        assert_eq!(m.features(&x).unwrap().len(), 3 * 64);
        assert_eq!(l, m.logits(&x).unwrap());
        let again = ClassifierModel::from_params(cfg, &m.params().flatten()).unwrap();
        assert_eq!(again.logits(&x).unwrap(), l);
        let probs = m.probabilities(&x).unwrap();
        for row in probs.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_budget() {
        let cfg = ClassifierConfig { item_shape: ItemShape::image(32, 3), class_count: 10, arch: ClassifierArch::resnet() };
        let n = ClassifierModel::new(cfg, &mut SeededRng::new(0, 0)).unwrap().params().total_len();
        assert!((150_000..400_000).contains(&n), "{n} parameters");
    }

    #[test]
    fn top_k_cases() {
        let perfect = [5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0];
        assert_eq!(top_k_accuracy(&perfect, &[0, 1, 2], 3, &[1, 3]).unwrap(), [1.0, 1.0]);
        let constant = [1.0, 0.0, 0.0].repeat(3);
        assert_eq!(top_k_accuracy(&constant, &[0, 1, 2], 3, &[1]).unwrap(), [1.0 / 3.0]);
        let flat = [0.0f32; 9];
        assert_eq!(top_k_accuracy(&flat, &[0, 1, 2], 3, &[1, 2, 3]).unwrap(), [1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert!(top_k_accuracy(&flat, &[0, 1, 2], 3, &[4]).is_err());
    }

    #[test]
    fn rejects_bad_layouts() {
        let vec_resnet = ClassifierConfig { item_shape: ItemShape::Vector { dim: 4 }, class_count: 2, arch: ClassifierArch::resnet() };
        assert!(vec_resnet.validate().is_err());
        let odd = ClassifierConfig { item_shape: ItemShape::image(6, 3), class_count: 2, arch: ClassifierArch::resnet() };
        assert!(odd.validate().is_err());
    }
}
