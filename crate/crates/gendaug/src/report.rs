//! Tables and plots from sweep and experiment results.
//!
//! Output depends only on the input table, so regenerating a report from
//! the same results reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gendaug_core::harness::{SweepResult, SweepRow};
use gendaug_core::metrics::{pareto_frontier, Direction};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{experiment_rows_csv, summary_csv, ExperimentResult};
use crate::fsutil::{read_json, read_string, to_json, write_atomic};
use crate::svg::{Mark, Plot, Series};
use crate::sweep::sweep_rows_csv;

/// Per-class validation accuracy of classifiers trained on real and on
/// generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub class_names: Vec<String>,
    pub real: Vec<Option<f64>>,
    pub generated: Vec<Option<f64>>,
}

fn write_text(out: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = out.join(name);
    write_atomic(&path, text.as_bytes())?;
    written.push(path);
    Ok(())
}

fn csv_text(bytes: Vec<u8>) -> String {
    String::from_utf8(bytes).unwrap_or_default()
}

/// FID-vs-IS scatter with the Pareto frontier highlighted.
pub fn pareto_plot(rows: &[SweepRow]) -> Result<Option<Plot>> {
    let pts: Vec<(usize, f64, f64)> =
        rows.iter().filter_map(|r| Some((r.cell, r.fid_train.or(r.fid_val)?, r.is_mean?))).collect();
    if pts.is_empty() {
        return Ok(None);
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.2)).collect();
    let front = pareto_frontier(&xy, (Direction::Min, Direction::Max))?;
    let mut on: Vec<(f64, f64)> = front.iter().map(|&i| xy[i]).collect();
    on.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let off: Vec<(f64, f64)> = (0..xy.len()).filter(|i| !front.contains(i)).map(|i| xy[i]).collect();
    let mut data = String::from("cell,fid,is,frontier\n");
    for (i, p) in pts.iter().enumerate() {
        data.push_str(&format!("{},{},{},{}\n", p.0, p.1, p.2, front.contains(&i)));
    }
    let mut frontier = Series::new("Pareto frontier", on, Mark::LinePoints);
    frontier.class = "frontier".into();
    frontier.color = Some("#d62728".into());
    let mut dominated = Series::new("dominated", off, Mark::Points);
    dominated.class = "dominated".into();
    dominated.color = Some("#999999".into());
    Ok(Some(Plot {
        title: "FID vs IS".into(),
        x_label: "FID (lower is better)".into(),
        y_label: "IS (higher is better)".into(),
        series: vec![dominated, frontier],
        data,
        ..Default::default()
    }))
}

/// CAS top-1 against guidance weight, one curve per remaining parameter
/// combination.
pub fn cas_guidance_plot(rows: &[SweepRow]) -> Option<Plot> {
    let mut groups: BTreeMap<(u64, u64, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut data = String::from("cell,guidance,log_variance,aug_level,steps,cas_top1\n");
    for r in rows {
        let Some(c) = r.cas_top1 else { continue };
        groups.entry((r.log_variance.to_bits(), r.aug_level.to_bits(), r.steps)).or_default().push((r.guidance, 100.0 * c));
        data.push_str(&format!("{},{},{},{},{},{}\n", r.cell, r.guidance, r.log_variance, r.aug_level, r.steps, c));
    }
    if groups.is_empty() {
        return None;
    }
    let series = groups
        .into_iter()
        .map(|((v, a, steps), mut pts)| {
            pts.sort_by(|p, q| p.0.total_cmp(&q.0));
            let name = format!("v={} a={} steps={steps}", f64::from_bits(v), f64::from_bits(a));
            Series::new(name, pts, Mark::LinePoints)
        })
        .collect();
    Some(Plot {
        title: "CAS vs guidance".into(),
        x_label: "guidance weight w".into(),
        y_label: "CAS top-1 (%)".into(),
        series,
        data,
        ..Default::default()
    })
}

/// Mean top-1 against multiplier with ±1 std bars and the real-only
/// baseline as a horizontal line.
pub fn scaling_plot(result: &ExperimentResult) -> Option<Plot> {
    if result.summary.is_empty() {
        return None;
    }
    let mut summary = result.summary.clone();
    summary.sort_by(|a, b| a.multiplier.total_cmp(&b.multiplier));
    let mut data = String::from("multiplier,total_size,top1_mean,top1_std,delta_vs_baseline\n");
    for s in &summary {
        data.push_str(&format!("{},{},{},{},{}\n", s.multiplier, s.total_size, s.top1_mean, s.top1_std, s.delta_vs_baseline));
    }
    let mut series = Series::new("real + generated", summary.iter().map(|s| (s.multiplier, 100.0 * s.top1_mean)).collect(), Mark::LinePoints);
    series.errors = Some(summary.iter().map(|s| 100.0 * s.top1_std).collect());
    let hlines = summary
        .iter()
        .find(|s| s.multiplier == 0.0)
        .map(|s| vec![(100.0 * s.top1_mean, "real only (m = 0)".to_string())])
        .unwrap_or_default();
    Some(Plot {
        title: "Accuracy vs generated-data multiplier".into(),
        x_label: "multiplier m".into(),
        y_label: "top-1 accuracy (%)".into(),
        series: vec![series],
        hlines,
        data,
        ..Default::default()
    })
}

/// Per-class accuracy when trained on real (x) versus generated (y) data.
pub fn per_class_plot(pc: &PerClassAccuracy) -> Plot {
    let mut data = String::from("class,real,generated\n");
    let mut pts = Vec::new();
    for (i, (r, g)) in pc.real.iter().zip(&pc.generated).enumerate() {
        let name = pc.class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        data.push_str(&format!("{},{},{}\n", name.replace(',', " "), fmt(r), fmt(g)));
        if let (Some(r), Some(g)) = (r, g) {
            pts.push((100.0 * r, 100.0 * g));
        }
    }
    Plot {
        title: "Per-class accuracy".into(),
        x_label: "trained on real (%)".into(),
        y_label: "trained on generated (%)".into(),
        series: vec![Series::new("class", pts, Mark::Points)],
        diagonal: true,
        data,
        ..Default::default()
    }
}

pub fn report_sweep(result: &SweepResult, out: &Path) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::Config("nothing to report: the sweep has no rows".into()));
    }
    let mut written = Vec::new();
    write_text(out, "rows.csv", &csv_text(sweep_rows_csv(&result.rows)?), &mut written)?;
    write_text(out, "rows.json", &to_json(result)?, &mut written)?;
    if let Some(p) = pareto_plot(&result.rows)? {
        write_text(out, "pareto.svg", &p.render(), &mut written)?;
    }
    if let Some(p) = cas_guidance_plot(&result.rows) {
        write_text(out, "cas_vs_guidance.svg", &p.render(), &mut written)?;
    }
    Ok(written)
}

pub fn report_experiment(result: &ExperimentResult, out: &Path) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::Config("nothing to report: the experiment has no rows".into()));
    }
    let mut written = Vec::new();
    write_text(out, "rows.csv", &csv_text(experiment_rows_csv(&result.rows)?), &mut written)?;
    write_text(out, "summary.csv", &csv_text(summary_csv(&result.summary)?), &mut written)?;
    write_text(out, "rows.json", &to_json(result)?, &mut written)?;
    if let Some(p) = scaling_plot(result) {
        write_text(out, "scaling.svg", &p.render(), &mut written)?;
    }
    Ok(written)
}

/// Reports whatever `input` holds: a sweep or experiment `results.json`
/// and, if present, `per_class.json`.
pub fn report_dir(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let results = input.join("results.json");
    if results.exists() {
        let text = read_string(&results)?;
        if let Ok(exp) = serde_json::from_str::<ExperimentResult>(&text) {
            written.extend(report_experiment(&exp, out)?);
        } else {
            let sweep: SweepResult = serde_json::from_str(&text).map_err(|e| Error::format(&results, e.to_string()))?;
            written.extend(report_sweep(&sweep, out)?);
        }
    }
    let per_class = input.join("per_class.json");
    if per_class.exists() {
        let pc: PerClassAccuracy = read_json(&per_class)?;
        write_text(out, "per_class.svg", &per_class_plot(&pc).render(), &mut written)?;
    }
    if written.is_empty() {
        return Err(Error::format(input, "no results.json or per_class.json to report"));
    }
    Ok(written)
}
