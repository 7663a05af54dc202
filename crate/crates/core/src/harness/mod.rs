//! Sweep grids over sampling parameters, class-balanced dataset
//! generation, per-cell evaluation and configuration fingerprints.
//!
//! Everything here is deterministic given a master seed: each grid cell
//! draws from its own stream, so cells may run in any order or in parallel.

mod fingerprint;
mod generate;
mod grid;
mod sweep;

pub use fingerprint::{fingerprint, fingerprint_with_params};
pub use generate::{generate_dataset, GenerationInfo, Generator};
pub use grid::{MetricKind, StageSelector, SweepCell, SweepGrid};
pub use sweep::{
    apply_cell, cas_targets, cell_cas, cell_rng, cell_samples, evaluate_cell, run_sweep, CasPolicy, EvalBudget,
    EvalContext, SweepResult, SweepRow,
};
