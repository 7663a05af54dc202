use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::generate::{generate_dataset, Generator};
use super::grid::{MetricKind, StageSelector, SweepCell, SweepGrid};
use crate::cas::{cas, ClassifierArch, TrainRecipe};
use crate::cascade::StageSampling;
use crate::datasets::LabeledDataset;
use crate::metrics::{fid, inception_score, pareto_frontier, Direction, FeatureExtractor, GaussianStats};
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Which cells get a CAS training run once FID and IS are known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasPolicy {
    None,
    #[default]
    Frontier,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBudget {
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
    #[serde(default)]
    pub cas: CasPolicy,
    #[serde(default = "default_splits")]
    pub is_splits: usize,
}

fn default_samples() -> usize {
    2000
}

fn default_splits() -> usize {
    crate::metrics::DEFAULT_IS_SPLITS
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self { samples_per_cell: default_samples(), cas: CasPolicy::default(), is_splits: default_splits() }
    }
}

/// Real data and frozen networks every cell is scored against.
pub struct EvalContext<'a> {
    /// Class-table row of each target label.
    pub class_map: &'a [usize],
    pub class_names: &'a [alloc::string::String],
    pub real_train: &'a LabeledDataset,
    pub real_val: &'a LabeledDataset,
    pub extractor: &'a FeatureExtractor,
    pub cas_arch: ClassifierArch,
    pub cas_recipe: &'a TrainRecipe,
    train_stats: GaussianStats,
    val_stats: GaussianStats,
}

impl<'a> EvalContext<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        class_map: &'a [usize],
        class_names: &'a [alloc::string::String],
        real_train: &'a LabeledDataset,
        real_val: &'a LabeledDataset,
        extractor: &'a FeatureExtractor,
        cas_arch: ClassifierArch,
        cas_recipe: &'a TrainRecipe,
    ) -> Result<Self> {
        if real_train.class_count() != class_map.len() || real_val.class_count() != class_map.len() {
            return Err(Error::shape(class_map.len(), (real_train.class_count(), real_val.class_count())));
        }
        let train_stats = extractor.stats(real_train.data())?;
        let val_stats = extractor.stats(real_val.data())?;
        Ok(Self { class_map, class_names, real_train, real_val, extractor, cas_arch, cas_recipe, train_stats, val_stats })
    }

    pub fn train_stats(&self) -> &GaussianStats {
        &self.train_stats
    }

    pub fn val_stats(&self) -> &GaussianStats {
        &self.val_stats
    }
}

/// Metrics of one grid cell; absent metrics were not requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub guidance: f64,
    pub log_variance: f64,
    pub aug_level: f64,
    pub steps: usize,
    pub fid_train: Option<f64>,
    pub fid_val: Option<f64>,
    pub is_mean: Option<f64>,
    pub is_std: Option<f64>,
    pub cas_top1: Option<f64>,
    pub cas_top5: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Random stream of grid cell `index` under `master_seed`.
pub fn cell_rng(master_seed: u64, index: usize) -> SeededRng {
    SeededRng::new(master_seed, 0).substream(index as u64)
}

/// The generator with the swept stage's sampler replaced by the cell's.
pub fn apply_cell<'a>(generator: &Generator<'a>, grid: &SweepGrid, cell: &SweepCell) -> Result<Generator<'a>> {
    let mut g = generator.clone();
    let sampler = cell.sampler(grid.sampler);
    match grid.stage {
        StageSelector::Base => g.base_sampler = sampler,
        StageSelector::Sr => {
            let last = g.stages.last_mut().ok_or_else(|| Error::config("sr sweep needs a super-resolution stage"))?;
            last.1 = StageSampling { sampler, aug_level: cell.aug_level };
        }
    }
    Ok(g)
}

/// The class-balanced samples a cell is scored on.
pub fn cell_samples(
    generator: &Generator<'_>,
    grid: &SweepGrid,
    cell: &SweepCell,
    ctx: &EvalContext<'_>,
    budget: &EvalBudget,
    master_seed: u64,
) -> Result<LabeledDataset> {
    let c = ctx.class_map.len();
    if budget.samples_per_cell == 0 || budget.samples_per_cell % c != 0 {
        return Err(Error::config(alloc::format!(
            "{} samples per cell do not split evenly over {c} classes",
            budget.samples_per_cell
        )));
    }
    let g = apply_cell(generator, grid, cell)?;
    generate_dataset(&g, ctx.class_map, ctx.class_names, budget.samples_per_cell / c, &mut cell_rng(master_seed, cell.index).substream(0))
}

/// FID and IS of one cell; CAS fields stay empty.
pub fn evaluate_cell(
    generator: &Generator<'_>,
    grid: &SweepGrid,
    cell: &SweepCell,
    ctx: &EvalContext<'_>,
    budget: &EvalBudget,
    master_seed: u64,
) -> Result<SweepRow> {
    let samples = cell_samples(generator, grid, cell, ctx, budget, master_seed)?;
    let mut row = SweepRow {
        cell: cell.index,
        guidance: cell.guidance,
        log_variance: cell.log_variance,
        aug_level: cell.aug_level,
        steps: cell.steps,
        fid_train: None,
        fid_val: None,
        is_mean: None,
        is_std: None,
        cas_top1: None,
        cas_top5: None,
    };
    if grid.wants(MetricKind::FidTrain) || grid.wants(MetricKind::FidVal) {
        let stats = ctx.extractor.stats(samples.data())?;
        if grid.wants(MetricKind::FidTrain) {
            row.fid_train = Some(fid(&stats, &ctx.train_stats)?);
        }
        if grid.wants(MetricKind::FidVal) {
            row.fid_val = Some(fid(&stats, &ctx.val_stats)?);
        }
    }
    if grid.wants(MetricKind::Is) {
        let probs = ctx.extractor.probabilities(samples.data())?;
        let (m, s) = inception_score(&probs, ctx.class_map.len(), budget.is_splits)?;
        row.is_mean = Some(m);
        row.is_std = Some(s);
    }
    Ok(row)
}

/// CAS top-1 and top-5 of one cell's samples.
pub fn cell_cas(
    generator: &Generator<'_>,
    grid: &SweepGrid,
    cell: &SweepCell,
    ctx: &EvalContext<'_>,
    budget: &EvalBudget,
    master_seed: u64,
) -> Result<(f64, f64)> {
    let samples = cell_samples(generator, grid, cell, ctx, budget, master_seed)?;
    let rec = cas(&samples, ctx.real_val, ctx.cas_arch, ctx.cas_recipe, None, &mut cell_rng(master_seed, cell.index).substream(1))?;
    Ok((rec.top1, rec.top5))
}

/// Cells (by position in `rows`) that receive a CAS run under `policy`.
///
/// The frontier is taken over (FID, IS), preferring training-set FID, and
/// falls back to all cells when neither metric was computed.
pub fn cas_targets(grid: &SweepGrid, rows: &[SweepRow], policy: CasPolicy) -> Result<Vec<usize>> {
    if !grid.wants(MetricKind::Cas) || rows.is_empty() {
        return Ok(Vec::new());
    }
    match policy {
        CasPolicy::None => Ok(Vec::new()),
        CasPolicy::All => Ok((0..rows.len()).collect()),
        CasPolicy::Frontier => {
            let pts: Vec<(f64, f64)> =
                rows.iter().map(|r| (r.fid_train.or(r.fid_val).unwrap_or(0.0), r.is_mean.unwrap_or(0.0))).collect();
            pareto_frontier(&pts, (Direction::Min, Direction::Max))
        }
    }
}

/// Serial two-phase sweep: FID and IS for every cell, then CAS for the
/// cells `budget.cas` selects.
pub fn run_sweep(
    generator: &Generator<'_>,
    grid: &SweepGrid,
    ctx: &EvalContext<'_>,
    budget: &EvalBudget,
    master_seed: u64,
) -> Result<SweepResult> {
    grid.validate()?;
    let cells = grid.cells();
    let mut rows = cells
        .iter()
        .map(|cell| evaluate_cell(generator, grid, cell, ctx, budget, master_seed))
        .collect::<Result<Vec<_>>>()?;
    for i in cas_targets(grid, &rows, budget.cas)? {
        let (t1, t5) = cell_cas(generator, grid, &cells[i], ctx, budget, master_seed)?;
        rows[i].cas_top1 = Some(t1);
        rows[i].cas_top5 = Some(t5);
    }
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cas::LrDecay;
    use crate::cascade::{DiffusionModel, ModelSpec};
    use crate::datasets::{make_gaussian_world, GaussianWorldConfig};
    use crate::diffusion::{DenoiserConfig, SamplerConfig, SamplerKind, ScheduleKind};
    use crate::metrics::fit_stats;
    use alloc::vec;

    #[test]
    fn single_cell_matches_direct_calls() {
        let cfg = GaussianWorldConfig::axis_aligned(2, 3, 2.0, 0.5, 60, 60);
        let (train, val) = make_gaussian_world(&cfg, &SeededRng::new(1, 0)).unwrap();
        let spec = ModelSpec::base(DenoiserConfig::mlp(3, 4, 16), ScheduleKind::linear(), 20);
        let model = DiffusionModel::new(spec, &mut SeededRng::new(0, 0)).unwrap();
        let recipe = TrainRecipe { epochs: 2, batch_size: 16, warmup_epochs: 0, decay: LrDecay::Cosine, ..TrainRecipe::desk_cas() };
        let ext = FeatureExtractor::Identity { dim: 3 };
        let map = [1, 3];
        let ctx = EvalContext::new(&map, &[], &train, &val, &ext, ClassifierArch::Mlp { hidden: 8 }, &recipe).unwrap();
        let grid = SweepGrid {
            stage: StageSelector::Base,
            sampler: SamplerKind::Ddim,
            guidance: vec![1.5],
            log_variance: vec![0.0],
            aug_levels: vec![0.0],
            steps: vec![5],
            metrics: vec![MetricKind::FidTrain, MetricKind::FidVal, MetricKind::Cas],
        };
        let budget = EvalBudget { samples_per_cell: 40, cas: CasPolicy::All, is_splits: 1 };
        let gen = Generator::base(&model, SamplerConfig::ddpm(20));
        let res = run_sweep(&gen, &grid, &ctx, &budget, 7).unwrap();
        assert_eq!(res.rows.len(), 1);
        let row = &res.rows[0];

        let direct_gen = Generator::base(&model, SamplerConfig::ddim(5).with_guidance(1.5));
        let ds = generate_dataset(&direct_gen, &map, &[], 20, &mut cell_rng(7, 0).substream(0)).unwrap();
        let stats = fit_stats(&ds.data().iter().map(|&v| v as f64).collect::<Vec<_>>(), 3).unwrap();
        let train_stats = fit_stats(&train.data().iter().map(|&v| v as f64).collect::<Vec<_>>(), 3).unwrap();
        assert_eq!(row.fid_train, Some(fid(&stats, &train_stats).unwrap()));
        let rec = cas(&ds, &val, ClassifierArch::Mlp { hidden: 8 }, &recipe, None, &mut cell_rng(7, 0).substream(1)).unwrap();
        assert_eq!((row.cas_top1, row.cas_top5), (Some(rec.top1), Some(rec.top5)));
        assert_eq!(row.is_mean, None);

        let odd = EvalBudget { samples_per_cell: 41, ..budget };
        assert!(run_sweep(&gen, &grid, &ctx, &odd, 7).is_err());
        let sr = SweepGrid { stage: StageSelector::Sr, ..grid };
        assert!(run_sweep(&gen, &sr, &ctx, &budget, 7).is_err());
    }

    #[test]
    fn frontier_policy_picks_nondominated_cells() {
        let row = |cell, f, is| SweepRow {
            cell,
            guidance: 1.0,
            log_variance: 0.0,
            aug_level: 0.0,
            steps: 1,
            fid_train: Some(f),
            fid_val: None,
            is_mean: Some(is),
            is_std: Some(0.0),
            cas_top1: None,
            cas_top5: None,
        };
        let rows = [row(0, 1.0, 2.0), row(1, 2.0, 3.0), row(2, 3.0, 2.5)];
        let grid = SweepGrid {
            stage: StageSelector::Base,
            sampler: SamplerKind::Ddpm,
            guidance: vec![1.0],
            log_variance: vec![0.0],
            aug_levels: vec![0.0],
            steps: vec![1],
            metrics: vec![MetricKind::Cas],
        };
        assert_eq!(cas_targets(&grid, &rows, CasPolicy::Frontier).unwrap(), [0, 1]);
        assert_eq!(cas_targets(&grid, &rows, CasPolicy::None).unwrap(), Vec::<usize>::new());
        let no_cas = SweepGrid { metrics: vec![MetricKind::Is], ..grid };
        assert!(cas_targets(&no_cas, &rows, CasPolicy::All).unwrap().is_empty());
    }
}
