//! Aggregation of run reports into a CSV table and plot-ready JSON series.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::train::{RunReport, RunStatus};

pub const REPORT_FILE: &str = "report.json";

/// Reports found in `dir` itself or one level below, ordered by run id then path.
pub fn collect_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut paths = Vec::new();
    let direct = dir.join(REPORT_FILE);
    if direct.is_file() {
        paths.push(direct);
    }
    if dir.is_dir() {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| HarnessError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        paths.extend(subdirs.into_iter().map(|d| d.join(REPORT_FILE)).filter(|p| p.is_file()));
    }
    if paths.is_empty() {
        return Err(HarnessError::ExitEmpty(dir.to_path_buf()));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
        reports.push(serde_json::from_str::<RunReport>(&text)?);
    }
    reports.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(reports)
}

fn axis_names(reports: &[RunReport]) -> Vec<String> {
    let set: BTreeSet<&String> = reports.iter().flat_map(|r| r.axes.keys()).collect();
    set.into_iter().cloned().collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per report: id, axis values, then the headline metrics.
pub fn write_csv(w: impl Write, reports: &[RunReport]) -> Result<()> {
    let axes = axis_names(reports);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["run_id".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(
        [
            "method",
            "seed",
            "status",
            "steps_completed",
            "best_probe_accuracy",
            "probe_accuracy",
            "eval_accuracy",
            "final_loss",
            "final_embedding_std",
            "collapsed",
        ]
        .map(String::from),
    );
    out.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.run_id.clone()];
        row.extend(axes.iter().map(|a| r.axes.get(a).cloned().unwrap_or_default()));
        row.push(r.method.clone());
        row.push(r.seed.to_string());
        row.push(match r.status {
            RunStatus::Ok => "ok".into(),
            RunStatus::Failed => "failed".into(),
        });
        row.push(r.steps_completed.to_string());
        row.push(opt(r.best_probe_accuracy));
        row.push(opt(r.probe_accuracy));
        row.push(opt(r.eval_accuracy));
        row.push(opt(r.final_loss));
        row.push(opt(r.final_embedding_std));
        row.push(r.collapsed.to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| HarnessError::io("csv", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub value: String,
    pub run_id: String,
    pub best_probe_accuracy: Option<f64>,
    pub probe_accuracy: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

/// Points along one axis with every other axis held at `fixed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub axis: String,
    pub fixed: BTreeMap<String, String>,
    pub points: Vec<SeriesPoint>,
}

fn cmp_values(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Accuracy-vs-axis series, sorted ascending by axis value (numerically when possible).
pub fn build_series(reports: &[RunReport]) -> Vec<Series> {
    let mut out = Vec::new();
    for axis in axis_names(reports) {
        let mut groups: BTreeMap<BTreeMap<String, String>, Vec<SeriesPoint>> = BTreeMap::new();
        for r in reports {
            let Some(value) = r.axes.get(&axis) else { continue };
            let mut fixed = r.axes.clone();
            fixed.remove(&axis);
            groups.entry(fixed).or_default().push(SeriesPoint {
                value: value.clone(),
                run_id: r.run_id.clone(),
                best_probe_accuracy: r.best_probe_accuracy,
                probe_accuracy: r.probe_accuracy,
                eval_accuracy: r.eval_accuracy,
            });
        }
        for (fixed, mut points) in groups {
            points.sort_by(|a, b| cmp_values(&a.value, &b.value).then_with(|| a.run_id.cmp(&b.run_id)));
            out.push(Series {
                axis: axis.clone(),
                fixed,
                points,
            });
        }
    }
    out
}

/// Writes `summary.csv` and `series.json` into `out_dir`.
pub fn write_report(reports: &[RunReport], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let csv_path = out_dir.join("summary.csv");
    let f = fs::File::create(&csv_path).map_err(|e| HarnessError::io(&csv_path, e))?;
    write_csv(f, reports)?;
    let series_path = out_dir.join("series.json");
    let mut f = fs::File::create(&series_path).map_err(|e| HarnessError::io(&series_path, e))?;
    serde_json::to_writer_pretty(&mut f, &build_series(reports))?;
    f.write_all(b"\n").map_err(|e| HarnessError::io(&series_path, e))?;
    Ok(())
}
