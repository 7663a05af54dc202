use gendaug::report::{pareto_plot, report_sweep};
use gendaug::store::{load_dataset, load_manifest, save_dataset};
use gendaug_core::datasets::{quantize_pixel, ItemShape, LabeledDataset, Provenance, Split};
use gendaug_core::harness::{SweepResult, SweepRow};
use gendaug_core::metrics::{pareto_frontier, Direction};
use proptest::prelude::*;

fn row(cell: usize, fid: f64, is: f64) -> SweepRow {
    SweepRow {
        cell,
        guidance: 1.0 + cell as f64,
        log_variance: 0.0,
        aug_level: 0.0,
        steps: 10,
        fid_train: Some(fid),
        fid_val: None,
        is_mean: Some(is),
        is_std: Some(0.1),
        cas_top1: None,
        cas_top5: None,
    }
}

fn dataset(image: bool, classes: usize, labels: Vec<u32>, values: Vec<f32>) -> LabeledDataset {
    let shape = if image { ItemShape::image(2, 3) } else { ItemShape::Vector { dim: 12 } };
    let data: Vec<f32> = (0..labels.len() * 12).map(|i| values[i % values.len()]).collect();
    let data = if image { data.into_iter().map(quantize_pixel).collect() } else { data };
    LabeledDataset::new(shape, classes, data, labels, Split::Val, Provenance::Real).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn datasets_round_trip_bitwise(
        image: bool,
        labels in prop::collection::vec(0u32..4, 1..20),
        values in prop::collection::vec(-1.0f32..1.0, 1..40),
    ) {
        let ds = dataset(image, 4, labels, values);
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(manifest.class_counts.clone(), ds.class_counts());
        prop_assert_eq!(load_manifest(dir.path()).unwrap(), manifest);
    }

    #[test]
    fn pareto_plot_marks_exactly_the_frontier(pts in prop::collection::vec((0u8..8, 0u8..8), 1..20)) {
        let rows: Vec<SweepRow> = pts.iter().enumerate().map(|(i, &(f, s))| row(i, f as f64, s as f64)).collect();
        let xy: Vec<(f64, f64)> = pts.iter().map(|&(f, s)| (f as f64, s as f64)).collect();
        let front = pareto_frontier(&xy, (Direction::Min, Direction::Max)).unwrap();
        let plot = pareto_plot(&rows).unwrap().unwrap();
        let flagged: Vec<usize> = plot.data.lines().skip(1).enumerate().filter(|(_, l)| l.ends_with(",true")).map(|(i, _)| i).collect();
        prop_assert_eq!(&flagged, &front);
        let svg = plot.render();
        prop_assert_eq!(svg.matches(r#"class="frontier""#).count(), front.len());
        prop_assert_eq!(svg.matches(r#"class="dominated""#).count(), pts.len() - front.len());
    }
}

#[test]
fn sweep_report_is_complete_and_reproducible() {
    let result = SweepResult { rows: vec![row(0, 3.0, 2.0), row(1, 1.0, 1.5), row(2, 2.0, 4.0), row(3, 4.0, 1.0)] };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = report_sweep(&result, a.path()).unwrap();
    report_sweep(&result, b.path()).unwrap();
    let csv = std::fs::read_to_string(a.path().join("rows.csv")).unwrap();
    assert_eq!(csv.lines().count(), result.rows.len() + 1);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }
    assert!(report_sweep(&SweepResult::default(), a.path()).is_err());
}

#[test]
fn shipped_configs_load_and_round_trip() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["gaussian.toml", "shapes.toml"] {
        let cfg = gendaug::config::RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(cfg.world.is_some() && cfg.base.is_some() && cfg.sweep.is_some() && cfg.augment.is_some(), "{name}");
        assert_eq!(gendaug::config::RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg, "{name}");
    }
}
