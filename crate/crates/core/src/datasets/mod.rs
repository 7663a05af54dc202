//! Labeled datasets, the two synthetic worlds, class-balanced mixing and
//! the image resampling used for preprocessing.

mod dataset;
mod gaussian;
pub mod image;
mod mix;
mod shapes;

pub use dataset::{
    pixel_to_u8, quantize_pixel, u8_to_pixel, DatasetMeta, ItemShape, LabeledDataset, Provenance, Split,
};
pub use gaussian::{make_gaussian_world, GaussianWorldConfig};
pub use image::{downsample, resize_center_crop, upsample};
pub use mix::{generated_quota, mix_datasets};
pub use shapes::{make_shape_world, render_shape, Color, Nuisance, Shape, ShapeWorld, ShapeWorldConfig};
