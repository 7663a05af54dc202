//! File formats, run configuration and experiment drivers around
//! `gendaug-core`, plus the `gendaug` command-line tool.
//!
//! Every artifact lives under one root directory (see
//! [`config::artifact_root`]). Datasets are `manifest.json` + `data.bin` +
//! `labels.bin` directories ([`store`]); models are `model.json` +
//! `params.bin` directories ([`checkpoint`]); sweeps and experiments write
//! resumable per-cell staging files and a final result table ([`sweep`],
//! [`experiment`]), which [`report`] turns into CSV, JSON and SVG.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod models;
pub mod report;
pub mod store;
pub mod svg;
pub mod sweep;
pub mod world;

pub use error::{Error, Result};
