//! Core algorithms for class-conditional diffusion data generation and
//! evaluation: tensors and reverse-mode gradients, noise schedules and
//! samplers, super-resolution cascades, FID / Inception Score / CAS
//! metrics, and the classifier recipes used for augmentation experiments.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel orchestration live in the `gendaug` crate.
#![no_std]
// `num_traits::Float` is shadowed by the inherent float methods whenever
// std is linked into the build.
#![allow(unused_imports)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cas;
pub mod cascade;
pub mod datasets;
pub mod diffusion;
mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;

pub use error::{Error, Result};
