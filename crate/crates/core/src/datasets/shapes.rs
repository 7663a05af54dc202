use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, ItemShape, LabeledDataset, Provenance, Split};
use crate::numerics::SeededRng;
use crate::{Error, Result};
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Diamond,
    Triangle,
    Ring,
    Cross,
    Plus,
    Hbar,
    Vbar,
    Frame,
}

impl Shape {
    pub const ALL: [Shape; 10] = [
        Shape::Circle,
        Shape::Square,
        Shape::Diamond,
        Shape::Triangle,
        Shape::Ring,
        Shape::Cross,
        Shape::Plus,
        Shape::Hbar,
        Shape::Vbar,
        Shape::Frame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Diamond => "diamond",
            Shape::Triangle => "triangle",
            Shape::Ring => "ring",
            Shape::Cross => "cross",
            Shape::Plus => "plus",
            Shape::Hbar => "hbar",
            Shape::Vbar => "vbar",
            Shape::Frame => "frame",
        }
    }

    /// Whether offset `(dx, dy)` (in units of the shape radius, y down)
    /// is inside the shape.
    fn contains(self, dx: f64, dy: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        let r = (dx * dx + dy * dy).sqrt();
        match self {
            Shape::Circle => r <= 1.0,
            Shape::Square => ax.max(ay) <= 0.85,
            Shape::Diamond => ax + ay <= 1.0,
            Shape::Triangle => (-1.0..=0.8).contains(&dy) && ax <= (dy + 1.0) / 1.8,
            Shape::Ring => (0.55..=1.0).contains(&r),
            Shape::Cross => ax.max(ay) <= 0.9 && (dx - dy).abs().min((dx + dy).abs()) <= 0.35,
            Shape::Plus => (ax <= 0.25 && ay <= 1.0) || (ay <= 0.25 && ax <= 1.0),
            Shape::Hbar => ay <= 0.35 && ax <= 1.0,
            Shape::Vbar => ax <= 0.35 && ay <= 1.0,
            Shape::Frame => (0.55..=0.9).contains(&ax.max(ay)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
}

impl Color {
    pub const ALL: [Color; 6] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Cyan, Color::Magenta];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.9, -0.7, -0.7],
            Color::Green => [-0.7, 0.8, -0.7],
            Color::Blue => [-0.6, -0.5, 0.9],
            Color::Yellow => [0.9, 0.85, -0.7],
            Color::Cyan => [-0.7, 0.85, 0.85],
            Color::Magenta => [0.85, -0.6, 0.85],
        }
    }
}

/// Position, scale and background ranges applied when rendering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nuisance {
    /// Maximum centre offset as a fraction of the image side.
    pub position_jitter: f64,
    /// Shape radius range as a fraction of half the image side.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Background gray level in `[-1, 1]`.
    pub background: f64,
    /// Per-image, per-channel uniform offset of the shape color.
    #[serde(default)]
    pub color_jitter: f64,
    /// Std of independent Gaussian pixel noise.
    #[serde(default)]
    pub pixel_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeWorldConfig {
    pub image_size: usize,
    pub shapes: Vec<Shape>,
    pub colors: Vec<Color>,
    /// Target labels as `"<color> <shape>"`, e.g. `"red circle"`.
    pub targets: Vec<String>,
    pub pretrain_per_class: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    /// Extra real target images reserved for the reference feature network.
    pub heldout_per_class: usize,
    pub pretrain_nuisance: Nuisance,
    pub target_nuisance: Nuisance,
}

impl Default for ShapeWorldConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            shapes: Shape::ALL.to_vec(),
            colors: Color::ALL[..5].to_vec(),
            targets: [
                "red circle",
                "green square",
                "blue triangle",
                "yellow cross",
                "cyan ring",
                "red diamond",
                "green plus",
                "blue hbar",
                "yellow vbar",
                "cyan frame",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            pretrain_per_class: 500,
            train_per_class: 500,
            val_per_class: 100,
            heldout_per_class: 100,
            pretrain_nuisance: Nuisance {
                position_jitter: 0.15,
                scale_min: 0.4,
                scale_max: 0.8,
                background: -1.0,
                color_jitter: 0.2,
                pixel_noise: 0.05,
            },
            target_nuisance: Nuisance {
                position_jitter: 0.12,
                scale_min: 0.45,
                scale_max: 0.8,
                background: -0.6,
                color_jitter: 0.25,
                pixel_noise: 0.08,
            },
        }
    }
}

impl ShapeWorldConfig {
    /// Compound label names of the pretraining corpus, indexed by label id
    /// (`shape_index * colors + color_index`).
    pub fn corpus_labels(&self) -> Vec<String> {
        self.shapes
            .iter()
            .flat_map(|s| self.colors.iter().map(move |c| alloc::format!("{} {}", c.name(), s.name())))
            .collect()
    }

    /// Corpus label id of every target class.
    pub fn target_corpus_ids(&self) -> Result<Vec<usize>> {
        let corpus = self.corpus_labels();
        self.targets
            .iter()
            .map(|t| {
                corpus
                    .iter()
                    .position(|c| c == t.trim())
                    .ok_or_else(|| Error::config(alloc::format!("target class {t:?} is not renderable")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::config("image size must be a power of two >= 8"));
        }
        if self.shapes.is_empty() || self.colors.is_empty() || self.targets.is_empty() {
            return Err(Error::config("shape world needs shapes, colors and targets"));
        }
        for n in [&self.pretrain_nuisance, &self.target_nuisance] {
            let ok = (0.0..0.5).contains(&n.position_jitter)
                && 0.0 < n.scale_min
                && n.scale_min <= n.scale_max
                && n.scale_max <= 1.0
                && (-1.0..=1.0).contains(&n.background)
                && n.color_jitter >= 0.0
                && n.pixel_noise >= 0.0;
            if !ok {
                return Err(Error::config("nuisance ranges out of bounds"));
            }
        }
        let ids = self.target_corpus_ids()?;
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::config("duplicate target class"));
        }
        Ok(())
    }
}

/// Corpus for pretraining plus the target-class splits.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeWorld {
    pub pretrain: LabeledDataset,
    pub target_train: LabeledDataset,
    pub target_val: LabeledDataset,
    pub target_heldout: LabeledDataset,
    /// Corpus label id for each target class id.
    pub target_to_corpus: Vec<usize>,
}

const SUPERSAMPLE: usize = 4;

/// Renders one anti-aliased image.
pub fn render_shape(size: usize, shape: Shape, color: Color, nuisance: &Nuisance, rng: &mut SeededRng) -> Vec<f32> {
    let half = size as f64 / 2.0;
    let cx = half + rng.uniform_in(-nuisance.position_jitter, nuisance.position_jitter) * size as f64;
    let cy = half + rng.uniform_in(-nuisance.position_jitter, nuisance.position_jitter) * size as f64;
    let radius = rng.uniform_in(nuisance.scale_min, nuisance.scale_max) * half;
    let mut rgb = color.rgb();
    for c in &mut rgb {
        *c = (*c + rng.uniform_in(-nuisance.color_jitter, nuisance.color_jitter) as f32).clamp(-1.0, 1.0);
    }
    let bg = nuisance.background as f32;
    let noise = nuisance.pixel_noise;
    let mut out = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    if shape.contains((px - cx) / radius, (py - cy) / radius) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            for &c in &rgb {
                let jitter = if noise > 0.0 { (noise * rng.normal()) as f32 } else { 0.0 };
                out.push((bg + (c - bg) * cover + jitter).clamp(-1.0, 1.0));
            }
        }
    }
    out
}

fn render_set(
    config: &ShapeWorldConfig,
    classes: &[(Shape, Color)],
    per_class: usize,
    nuisance: &Nuisance,
    split: Split,
    names: Vec<String>,
    rng: &mut SeededRng,
) -> Result<LabeledDataset> {
    let shape = ItemShape::image(config.image_size, 3);
    let mut data = Vec::with_capacity(classes.len() * per_class * shape.len());
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for (c, &(s, col)) in classes.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(render_shape(config.image_size, s, col, nuisance, rng));
            labels.push(c as u32);
        }
    }
    Ok(LabeledDataset::new(shape, classes.len(), data, labels, split, Provenance::Real)?
        .with_meta(DatasetMeta { class_names: names, ..Default::default() }))
}

/// Renders the pretraining corpus (every shape × color) and the target
/// train/val/held-out splits, each from its own substream.
pub fn make_shape_world(config: &ShapeWorldConfig, rng: &SeededRng) -> Result<ShapeWorld> {
    config.validate()?;
    let corpus: Vec<(Shape, Color)> =
        config.shapes.iter().flat_map(|&s| config.colors.iter().map(move |&c| (s, c))).collect();
    let target_to_corpus = config.target_corpus_ids()?;
    let targets: Vec<(Shape, Color)> = target_to_corpus.iter().map(|&i| corpus[i]).collect();
    let target_names: Vec<String> = config.targets.iter().map(|t| t.trim().to_string()).collect();
    let tn = &config.target_nuisance;
    Ok(ShapeWorld {
        pretrain: render_set(
            config,
            &corpus,
            config.pretrain_per_class,
            &config.pretrain_nuisance,
            Split::Train,
            config.corpus_labels(),
            &mut rng.substream(0),
        )?,
        target_train: render_set(config, &targets, config.train_per_class, tn, Split::Train, target_names.clone(), &mut rng.substream(1))?,
        target_val: render_set(config, &targets, config.val_per_class, tn, Split::Val, target_names.clone(), &mut rng.substream(2))?,
        target_heldout: render_set(config, &targets, config.heldout_per_class, tn, Split::Train, target_names, &mut rng.substream(3))?,
        target_to_corpus,
    })
}
