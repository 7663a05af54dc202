//! Single-image resampling on HWC buffers. Bilinear resampling uses
//! half-pixel centers: output pixel `i` samples source coordinate
//! `(i + 0.5) · in / out − 0.5`, clamped to the edge.

use alloc::vec::Vec;

use super::ItemShape;
use crate::{Error, Result};
use num_traits::Float;

fn dims(shape: ItemShape, img: &[f32]) -> Result<(usize, usize, usize)> {
    match shape {
        ItemShape::Image { height, width, channels } if img.len() == height * width * channels => {
            Ok((height, width, channels))
        }
        ItemShape::Image { .. } => Err(Error::shape(shape.len(), img.len())),
        ItemShape::Vector { .. } => Err(Error::contract("image operation on a vector item")),
    }
}

fn axis_taps(out: usize, inp: usize) -> Vec<(usize, usize, f32)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(inp - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize to `out_h × out_w`.
pub fn resize_bilinear(img: &[f32], shape: ItemShape, out_h: usize, out_w: usize) -> Result<Vec<f32>> {
    let (h, w, c) = dims(shape, img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize target must be non-empty"));
    }
    let ys = axis_taps(out_h, h);
    let xs = axis_taps(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |y: usize, x: usize| img[(y * w + x) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

/// Resizes the shorter side to `resize_to` (the image is square, so both
/// sides) and cuts the centered `crop_to × crop_to` window.
pub fn resize_center_crop(img: &[f32], shape: ItemShape, resize_to: usize, crop_to: usize) -> Result<Vec<f32>> {
    let (h, w, c) = dims(shape, img)?;
    if h != w {
        return Err(Error::contract("center crop expects a square image"));
    }
    if crop_to > resize_to || crop_to == 0 {
        return Err(Error::config(alloc::format!("crop {crop_to} larger than resize {resize_to}")));
    }
    let resized = if resize_to == h { img.to_vec() } else { resize_bilinear(img, shape, resize_to, resize_to)? };
    let off = (resize_to - crop_to) / 2;
    let mut out = Vec::with_capacity(crop_to * crop_to * c);
    for y in off..off + crop_to {
        let row = (y * resize_to + off) * c;
        out.extend_from_slice(&resized[row..row + crop_to * c]);
    }
    Ok(out)
}

/// Bilinear upsampling by 2 or 4.
pub fn upsample(img: &[f32], shape: ItemShape, factor: usize) -> Result<Vec<f32>> {
    if factor != 2 && factor != 4 {
        return Err(Error::config(alloc::format!("unsupported upsampling factor {factor}")));
    }
    let (h, w, _) = dims(shape, img)?;
    resize_bilinear(img, shape, h * factor, w * factor)
}

/// Box-filter downsampling by an integer factor dividing both sides.
pub fn downsample(img: &[f32], shape: ItemShape, factor: usize) -> Result<Vec<f32>> {
    let (h, w, c) = dims(shape, img)?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::config(alloc::format!("factor {factor} does not divide {h}x{w}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = alloc::vec![0.0f32; oh * ow * c];
    for y in 0..h {
        for x in 0..w {
            let o = ((y / factor) * ow + x / factor) * c;
            let i = (y * w + x) * c;
            for ch in 0..c {
                out[o + ch] += img[i + ch] * norm;
            }
        }
    }
    Ok(out)
}

/// Mirror across the vertical axis.
pub fn hflip(img: &[f32], shape: ItemShape) -> Result<Vec<f32>> {
    let (h, w, c) = dims(shape, img)?;
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let i = (y * w + x) * c;
            out.extend_from_slice(&img[i..i + c]);
        }
    }
    Ok(out)
}

/// Pads by `pad` pixels with edge replication, then cuts the original-size
/// window whose top-left corner is at `(dy, dx)` in padded coordinates.
pub fn pad_crop(img: &[f32], shape: ItemShape, pad: usize, dy: usize, dx: usize) -> Result<Vec<f32>> {
    let (h, w, c) = dims(shape, img)?;
    if dy > 2 * pad || dx > 2 * pad {
        return Err(Error::OutOfRange(alloc::format!("crop offset ({dy}, {dx}) for padding {pad}")));
    }
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        let sy = (y + dy).saturating_sub(pad).min(h - 1);
        for x in 0..w {
            let sx = (x + dx).saturating_sub(pad).min(w - 1);
            let i = (sy * w + sx) * c;
            out.extend_from_slice(&img[i..i + c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_and_constancy() {
        let s = ItemShape::image(16, 3);
        let img: Vec<f32> = (0..s.len()).map(|i| (i % 7) as f32 / 7.0).collect();
        assert_eq!(resize_center_crop(&img, s, 16, 16).unwrap(), img);
        let flat = vec![0.25f32; 32 * 32];
        let out = resize_center_crop(&flat, ItemShape::image(32, 1), 24, 16).unwrap();
        assert_eq!(out.len(), 256);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert!(resize_center_crop(&flat, ItemShape::image(32, 1), 16, 24).is_err());
    }

    #[test]
    fn upsample_shape_and_ramp() {
        let s = ItemShape::image(8, 1);
        let ramp: Vec<f32> = (0..64).map(|i| (i % 8) as f32 * 0.1).collect();
        let up = upsample(&ramp, s, 2).unwrap();
        assert_eq!(up.len(), 256);
        let back = downsample(&up, ItemShape::image(16, 1), 2).unwrap();
        // Interior columns are reproduced exactly by a linear ramp; the two
        // edge columns carry the clamp error of a quarter step.
        for y in 0..8 {
            for x in 1..7 {
                assert!((back[y * 8 + x] - ramp[y * 8 + x]).abs() < 1e-6);
            }
            assert!((back[y * 8] - ramp[y * 8]).abs() <= 0.025 + 1e-6);
        }
        assert!(upsample(&ramp, s, 3).is_err());
    }

    #[test]
    fn flip_and_pad_crop() {
        let s = ItemShape::Image { height: 1, width: 3, channels: 1 };
        assert_eq!(hflip(&[1.0, 2.0, 3.0], s).unwrap(), [3.0, 2.0, 1.0]);
        assert_eq!(pad_crop(&[1.0, 2.0, 3.0], s, 1, 1, 1).unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(pad_crop(&[1.0, 2.0, 3.0], s, 1, 1, 0).unwrap(), [1.0, 1.0, 2.0]);
        assert_eq!(pad_crop(&[1.0, 2.0, 3.0], s, 1, 1, 2).unwrap(), [2.0, 3.0, 3.0]);
    }
}
