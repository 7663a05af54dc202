use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::ItemShape;
use crate::numerics::layers::{sinusoidal_features, Conv2d, Dense, Embedding, GroupNorm};
use crate::numerics::{Graph, ParamSet, Real, SeededRng, Var};
use crate::{Error, Result};

/// Scale applied to an augmentation level in `[0, 1]` before its sinusoidal
/// features, so it spans the same frequency band as a timestep.
const AUG_LEVEL_SCALE: f64 = 1000.0;

/// Per-item conditioning for an ε-prediction call.
///
/// `None` in `classes` is the null token. `lowres` is the low-resolution
/// input already resampled to the model's item shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    pub classes: Vec<Option<usize>>,
    pub lowres: Option<Vec<T>>,
    pub aug_levels: Option<Vec<f64>>,
}

impl<T: Real> Conditioning<T> {
    pub fn classes(classes: &[usize]) -> Self {
        Self { classes: classes.iter().map(|&c| Some(c)).collect(), lowres: None, aug_levels: None }
    }

    pub fn optional_classes(classes: Vec<Option<usize>>) -> Self {
        Self { classes, lowres: None, aug_levels: None }
    }

    pub fn with_lowres(mut self, lowres: Vec<T>, aug_levels: Vec<f64>) -> Self {
        self.lowres = Some(lowres);
        self.aug_levels = Some(aug_levels);
        self
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Same conditioning with every class replaced by the null token.
    pub fn nulled(&self) -> Self {
        Self { classes: vec![None; self.classes.len()], lowres: self.lowres.clone(), aug_levels: self.aug_levels.clone() }
    }

    /// Items `range` of this conditioning.
    pub fn slice(&self, range: core::ops::Range<usize>, item_len: usize) -> Self {
        Self {
            classes: self.classes[range.clone()].to_vec(),
            lowres: self.lowres.as_ref().map(|l| l[range.start * item_len..range.end * item_len].to_vec()),
            aug_levels: self.aug_levels.as_ref().map(|a| a[range].to_vec()),
        }
    }
}

/// Anything that predicts the noise in `x_t`.
pub trait EpsilonModel<T: Real> {
    fn item_shape(&self) -> ItemShape;

    fn class_count(&self) -> usize;

    /// `x_t` holds `cond.len()` items back to back; `t[i]` is item i's
    /// timestep in `1..=T`.
    fn predict_epsilon(&self, x_t: &[T], t: &[usize], cond: &Conditioning<T>) -> Result<Vec<T>>;
}

pub(crate) fn check_batch<T: Real>(
    shape: ItemShape,
    class_count: usize,
    x: &[T],
    t: &[usize],
    cond: &Conditioning<T>,
) -> Result<usize> {
    let n = cond.len();
    if x.len() != n * shape.len() {
        return Err(Error::shape(shape.batch_dims(n), x.len()));
    }
    if t.len() != n {
        return Err(Error::shape(n, t.len()));
    }
    if let Some(c) = cond.classes.iter().flatten().find(|&&c| c >= class_count) {
        return Err(Error::OutOfRange(alloc::format!("class id {c} for {class_count} classes")));
    }
    if let Some(l) = &cond.lowres {
        if l.len() != x.len() {
            return Err(Error::shape(x.len(), l.len()));
        }
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Three dense layers; timestep and class embeddings join the first
    /// hidden layer.
    Mlp { width: usize },
    /// Convolutional encoder-decoder with two downsampling levels.
    UNet { widths: [usize; 2], groups: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub item_shape: ItemShape,
    pub class_count: usize,
    pub architecture: Architecture,
    /// Width of the timestep/class embedding (U-Net only; the MLP uses its
    /// hidden width).
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Super-resolution stage: also conditioned on an upsampled
    /// low-resolution image and its augmentation level.
    #[serde(default)]
    pub lowres_conditioning: bool,
}

fn default_embed_dim() -> usize {
    64
}

impl DenoiserConfig {
    pub fn mlp(dim: usize, class_count: usize, width: usize) -> Self {
        Self {
            item_shape: ItemShape::Vector { dim },
            class_count,
            architecture: Architecture::Mlp { width },
            embed_dim: width,
            lowres_conditioning: false,
        }
    }

    pub fn unet(side: usize, channels: usize, class_count: usize, widths: [usize; 2]) -> Self {
        Self {
            item_shape: ItemShape::image(side, channels),
            class_count,
            architecture: Architecture::UNet { widths, groups: 4 },
            embed_dim: default_embed_dim(),
            lowres_conditioning: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 1 {
            return Err(Error::config("denoiser needs at least one class"));
        }
        match (self.architecture, self.item_shape) {
            (Architecture::Mlp { width }, ItemShape::Vector { dim }) => {
                if width < 2 || dim < 1 {
                    return Err(Error::config("mlp width must be >= 2 and dim >= 1"));
                }
                if self.lowres_conditioning {
                    return Err(Error::config("low-resolution conditioning needs an image denoiser"));
                }
            }
            (Architecture::UNet { widths, groups }, ItemShape::Image { height, width, channels }) => {
                if height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0 || channels == 0 {
                    return Err(Error::config("u-net needs non-empty spatial sides divisible by 4"));
                }
                if groups == 0 || widths.iter().any(|&w| w == 0 || w % groups != 0) {
                    return Err(Error::config("u-net widths must be positive multiples of the group count"));
                }
                if self.embed_dim < 2 {
                    return Err(Error::config("embedding width must be >= 2"));
                }
            }
            _ => return Err(Error::config("architecture does not match the item shape")),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb: Dense,
    norm2: GroupNorm,
    conv2: Conv2d,
}

impl ResBlock {
    fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, ch: usize, groups: usize, embed: usize, rng: &mut SeededRng) -> Self {
        Self {
            norm1: GroupNorm::new(ps, &alloc::format!("{name}.norm1"), ch, groups),
            conv1: Conv2d::new(ps, &alloc::format!("{name}.conv1"), ch, ch, 3, rng),
            emb: Dense::new(ps, &alloc::format!("{name}.emb"), embed, ch, rng),
            norm2: GroupNorm::new(ps, &alloc::format!("{name}.norm2"), ch, groups),
            conv2: Conv2d::with_gain(ps, &alloc::format!("{name}.conv2"), ch, ch, 3, 0.5, rng),
        }
    }

    fn forward<'p, T: Real>(&self, g: &mut Graph<'p, T>, ps: &'p ParamSet<T>, x: Var, emb: Var) -> Var {
        let h = self.norm1.forward(g, ps, x);
        let h = g.silu(h);
        let h = self.conv1.forward(g, ps, h);
        let e = self.emb.forward(g, ps, emb);
        let h = g.add_rows(h, e);
        let h = self.norm2.forward(g, ps, h);
        let h = g.silu(h);
        let h = self.conv2.forward(g, ps, h);
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct UNet {
    conv_in: Conv2d,
    conv_lowres: Option<Conv2d>,
    down0: ResBlock,
    widen: Conv2d,
    down1: ResBlock,
    mid: ResBlock,
    up1: ResBlock,
    narrow: Conv2d,
    up0: ResBlock,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

#[derive(Clone, Debug)]
struct Mlp {
    input: Dense,
    hidden: Dense,
    output: Dense,
}

#[derive(Clone, Debug)]
enum Body {
    Mlp(Mlp),
    UNet(UNet),
}

#[derive(Clone, Debug)]
struct Net {
    time: Dense,
    aug: Option<Dense>,
    classes: Embedding,
    body: Body,
}

fn build_net<T: Real>(config: &DenoiserConfig, ps: &mut ParamSet<T>, rng: &mut SeededRng) -> Net {
    let emb_width = match config.architecture {
        Architecture::Mlp { width } => width,
        Architecture::UNet { .. } => config.embed_dim,
    };
    let time = Dense::new(ps, "time", emb_width, emb_width, rng);
    let aug = config.lowres_conditioning.then(|| Dense::new(ps, "aug", emb_width, emb_width, rng));
    let classes = Embedding::new(ps, "class", config.class_count + 1, emb_width, rng);
    let body = match (config.architecture, config.item_shape) {
        (Architecture::Mlp { width }, shape) => Body::Mlp(Mlp {
            input: Dense::new(ps, "mlp.in", shape.len(), width, rng),
            hidden: Dense::new(ps, "mlp.hidden", width, width, rng),
            output: Dense::new(ps, "mlp.out", width, shape.len(), rng),
        }),
        (Architecture::UNet { widths: [w0, w1], groups }, ItemShape::Image { channels, .. }) => {
            let e = config.embed_dim;
            Body::UNet(UNet {
                conv_in: Conv2d::new(ps, "in", channels, w0, 3, rng),
                conv_lowres: config.lowres_conditioning.then(|| Conv2d::new(ps, "in_lowres", channels, w0, 3, rng)),
                down0: ResBlock::new(ps, "down0", w0, groups, e, rng),
                widen: Conv2d::new(ps, "widen", w0, w1, 3, rng),
                down1: ResBlock::new(ps, "down1", w1, groups, e, rng),
                mid: ResBlock::new(ps, "mid", w1, groups, e, rng),
                up1: ResBlock::new(ps, "up1", w1, groups, e, rng),
                narrow: Conv2d::new(ps, "narrow", w1, w0, 3, rng),
                up0: ResBlock::new(ps, "up0", w0, groups, e, rng),
                norm_out: GroupNorm::new(ps, "out.norm", w0, groups),
                conv_out: Conv2d::with_gain(ps, "out", w0, channels, 3, 0.5, rng),
            })
        }
        _ => unreachable!("validated"),
    };
    Net { time, aug, classes, body }
}

/// Trainable ε-prediction network with a `C + 1`-row class table; the last
/// row is the null token.
#[derive(Clone, Debug)]
pub struct Denoiser<T: Real> {
    config: DenoiserConfig,
    net: Net,
    params: ParamSet<T>,
}

impl<T: Real> Denoiser<T> {
    pub fn new(config: DenoiserConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let net = build_net(&config, &mut params, rng);
        Ok(Self { config, net, params })
    }

    /// Rebuilds a denoiser around stored parameters, checking that names and
    /// shapes match the architecture.
    pub fn from_params(config: DenoiserConfig, params: ParamSet<T>) -> Result<Self> {
        let template = Self::new(config, &mut SeededRng::new(0, 0))?;
        if template.params.names() != params.names() {
            return Err(Error::contract("parameter names do not match the architecture"));
        }
        for (a, b) in template.params.iter().zip(params.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::shape(a.shape(), b.shape()));
            }
        }
        Ok(Self { params, ..template })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Rows in the class table (`C + 1`).
    pub fn embedding_rows(&self) -> usize {
        self.params.get(self.net.classes.table).shape()[0]
    }

    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser { config: self.config.clone(), net: self.net.clone(), params: self.params.cast() }
    }

    /// Builds the prediction for a batch inside `g`.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, x_t: Var, t: &[usize], cond: &Conditioning<T>) -> Var {
        let ps = &self.params;
        let n = t.len();
        let net = &self.net;
        let width = ps.get(net.time.b).len();
        let tf = g.input([n, width], sinusoidal_features::<T>(&t.iter().map(|&s| s as f64).collect::<Vec<_>>(), width));
        let mut emb = net.time.forward(g, ps, tf);
        if let (Some(aug), Some(levels)) = (&net.aug, &cond.aug_levels) {
            let scaled: Vec<f64> = levels.iter().map(|a| a * AUG_LEVEL_SCALE).collect();
            let af = g.input([n, width], sinusoidal_features::<T>(&scaled, width));
            let ae = aug.forward(g, ps, af);
            emb = g.add(emb, ae);
        }
        let null = self.config.class_count;
        let ids: Vec<usize> = cond.classes.iter().map(|c| c.unwrap_or(null)).collect();
        let ce = net.classes.forward(g, ps, &ids);
        emb = g.add(emb, ce);

        match &net.body {
            Body::Mlp(m) => {
                let h = m.input.forward(g, ps, x_t);
                let h = g.add(h, emb);
                let h = g.silu(h);
                let h = m.hidden.forward(g, ps, h);
                let h = g.silu(h);
                m.output.forward(g, ps, h)
            }
            Body::UNet(u) => {
                let emb = g.silu(emb);
                let mut h = u.conv_in.forward(g, ps, x_t);
                if let (Some(conv), Some(low)) = (&u.conv_lowres, &cond.lowres) {
                    let shape = g.shape(x_t).to_vec();
                    let lv = g.input(shape, low.clone());
                    let lh = conv.forward(g, ps, lv);
                    h = g.add(h, lh);
                }
                let h0 = u.down0.forward(g, ps, h, emb);
                let p0 = g.avg_pool2(h0);
                let d1 = u.widen.forward(g, ps, p0);
                let h1 = u.down1.forward(g, ps, d1, emb);
                let p1 = g.avg_pool2(h1);
                let m = u.mid.forward(g, ps, p1, emb);
                let m = g.upsample2(m);
                let s1 = g.add(m, h1);
                let u1 = u.up1.forward(g, ps, s1, emb);
                let u1 = u.narrow.forward(g, ps, u1);
                let u1 = g.upsample2(u1);
                let s0 = g.add(u1, h0);
                let u0 = u.up0.forward(g, ps, s0, emb);
                let o = u.norm_out.forward(g, ps, u0);
                let o = g.silu(o);
                u.conv_out.forward(g, ps, o)
            }
        }
    }
}

impl<T: Real> EpsilonModel<T> for Denoiser<T> {
    fn item_shape(&self) -> ItemShape {
        self.config.item_shape
    }

    fn class_count(&self) -> usize {
        self.config.class_count
    }

    fn predict_epsilon(&self, x_t: &[T], t: &[usize], cond: &Conditioning<T>) -> Result<Vec<T>> {
        let n = check_batch(self.config.item_shape, self.config.class_count, x_t, t, cond)?;
        if self.config.lowres_conditioning && (cond.lowres.is_none() || cond.aug_levels.is_none()) {
            return Err(Error::contract("super-resolution denoiser called without low-resolution input"));
        }
        let mut g = Graph::new();
        let x = g.input(self.config.item_shape.batch_dims(n), x_t.to_vec());
        let out = self.forward(&mut g, x, t, cond);
        Ok(g.value(out).to_vec())
    }
}
