//! Cartesian hyperparameter sweeps over training runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_list, Config};
use crate::data::run_seed;
use crate::error::{HarnessError, Result};
use crate::report::write_report;
use crate::train::{run_training, RunOptions, RunReport, RunStatus, TrainSettings};

pub const FIG8_TEMPERATURES: [f64; 4] = [0.10, 0.15, 0.25, 0.5];
pub const FIG8_LEARNING_RATES: [f64; 9] = [0.3, 0.5, 0.7, 1.0, 1.2, 1.5, 2.0, 2.5, 3.0];
pub const BARLOW_LAMBDS: [f64; 5] = [0.0025, 0.0045, 0.0051, 0.0075, 0.01];
pub const EMA_MOMENTA: [f64; 3] = [0.8, 0.9, 0.996];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every run uses `run.seed`.
    Fixed,
    /// Run `i` uses `run.seed + i`.
    PerRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    /// Config key the values are written to.
    pub key: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub axes: Vec<Axis>,
    pub seed_policy: SeedPolicy,
    /// Concurrent runs; 1 runs the grid sequentially.
    pub parallel: usize,
}

/// Config key behind a short axis name; dotted names are taken verbatim.
pub fn axis_key(name: &str) -> Result<String> {
    let key = match name {
        "temperature" | "tau" => "train.temperature",
        "lr" | "learning_rate" => "train.lr",
        "lambd" | "barlow_lambd" => "train.barlow_lambd",
        "ema" | "momentum_encoder" => "train.ema",
        "batch_size" => "loader.batch_size",
        "projector_depth" => "train.projector_depth",
        "method" => "train.method",
        "seed" => "run.seed",
        other if other.contains('.') => other,
        other => return Err(HarnessError::Config(format!("unknown sweep axis {other:?}"))),
    };
    Ok(key.to_string())
}

fn shipped_grid(name: &str) -> Result<Vec<(&'static str, Vec<f64>)>> {
    match name {
        "fig8" => Ok(vec![
            ("temperature", FIG8_TEMPERATURES.to_vec()),
            ("lr", FIG8_LEARNING_RATES.to_vec()),
        ]),
        "lambd" => Ok(vec![("lambd", BARLOW_LAMBDS.to_vec())]),
        "ema" => Ok(vec![("ema", EMA_MOMENTA.to_vec())]),
        other => Err(HarnessError::Config(format!("sweep.grid = {other:?}"))),
    }
}

impl SweepConfig {
    /// Axes come from `sweep.grid` (a shipped grid) and `sweep.axis.<name> = v, v, …`.
    /// `sweep.order` lists axis names outermost first; otherwise grid axes lead,
    /// then explicit axes by name.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mut axes: Vec<Axis> = Vec::new();
        if let Some(grid) = cfg.get("sweep.grid") {
            for (name, values) in shipped_grid(grid)? {
                axes.push(Axis {
                    name: name.into(),
                    key: axis_key(name)?,
                    values: values.iter().map(|v| v.to_string()).collect(),
                });
            }
        }
        for (k, v) in cfg.entries() {
            let Some(name) = k.strip_prefix("sweep.axis.") else { continue };
            let values: Vec<String> = parse_list(k, v)?;
            let axis = Axis {
                name: name.into(),
                key: axis_key(name)?,
                values,
            };
            match axes.iter_mut().find(|a| a.name == axis.name) {
                Some(existing) => *existing = axis,
                None => axes.push(axis),
            }
        }
        if let Some(order) = cfg.list::<String>("sweep.order")? {
            let mut ordered = Vec::with_capacity(axes.len());
            for name in &order {
                let i = axes
                    .iter()
                    .position(|a| &a.name == name)
                    .ok_or_else(|| HarnessError::Config(format!("sweep.order names unknown axis {name:?}")))?;
                ordered.push(axes.remove(i));
            }
            ordered.append(&mut axes);
            axes = ordered;
        }
        let seed_policy = match cfg.get("sweep.seed_policy").unwrap_or("fixed") {
            "fixed" => SeedPolicy::Fixed,
            "per_run" => SeedPolicy::PerRun,
            other => return Err(HarnessError::Config(format!("sweep.seed_policy = {other:?}"))),
        };
        let sc = Self {
            axes,
            seed_policy,
            parallel: cfg.or("sweep.parallel", 1)?,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(HarnessError::Config("sweep has no axes (set sweep.grid or sweep.axis.*)".into()));
        }
        if let Some(a) = self.axes.iter().find(|a| a.values.is_empty()) {
            return Err(HarnessError::Config(format!("sweep axis {} is empty", a.name)));
        }
        Ok(())
    }

    pub fn run_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Grid point `i`, last axis varying fastest.
    pub fn point(&self, mut i: usize) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for a in self.axes.iter().rev() {
            out.insert(a.name.clone(), a.values[i % a.values.len()].clone());
            i /= a.values.len();
        }
        out
    }

    /// The base config with grid point `i` and its seed applied.
    pub fn run_config(&self, base: &Config, i: usize) -> Result<Config> {
        let mut cfg = base.clone();
        for a in &self.axes {
            cfg.set(&a.key, &self.point(i)[&a.name]);
        }
        if self.seed_policy == SeedPolicy::PerRun {
            let seed = run_seed(&cfg)? + i as u64;
            cfg.set("run.seed", seed);
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: usize,
    pub failed: usize,
    /// First run with the highest best probe accuracy.
    pub argmax: Option<String>,
    pub argmax_axes: BTreeMap<String, String>,
    pub argmax_accuracy: Option<f64>,
    pub out_dir: PathBuf,
}

fn failed_report(run_id: String, axes: BTreeMap<String, String>, cfg: &Config, err: &HarnessError) -> RunReport {
    RunReport {
        run_id,
        method: cfg.get("train.method").unwrap_or("simclr").to_string(),
        seed: run_seed(cfg).unwrap_or(0),
        status: RunStatus::Failed,
        error: Some(format!("{}: {err}", err.name())),
        steps_completed: 0,
        final_loss: None,
        final_embedding_std: None,
        probe_accuracy: None,
        best_probe_accuracy: None,
        eval_accuracy: None,
        offline_probe: None,
        collapsed: false,
        epochs: Vec::new(),
        axes,
        config: cfg.entries().clone(),
        wall_clock_ms: None,
    }
}

fn one_run(sweep: &SweepConfig, base: &Config, i: usize, out_dir: &Path, no_timing: bool) -> Result<RunReport> {
    let run_id = format!("run_{i:04}");
    let axes = sweep.point(i);
    let cfg = sweep.run_config(base, i)?;
    let dir = out_dir.join(&run_id);
    let opts = RunOptions {
        out_dir: Some(dir.clone()),
        dump_batches: None,
        no_timing,
        run_id: run_id.clone(),
        axes: axes.clone(),
    };
    let result = TrainSettings::from_config(&cfg).and_then(|s| run_training(&s, &opts));
    match result {
        Ok(r) => Ok(r),
        Err(e) => {
            let r = failed_report(run_id, axes, &cfg, &e);
            std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            let path = dir.join(crate::report::REPORT_FILE);
            let text = serde_json::to_string_pretty(&r)? + "\n";
            std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
            Ok(r)
        }
    }
}

/// Index of the first report with the highest `best_probe_accuracy`.
pub fn argmax(reports: &[RunReport]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        if let Some(a) = r.best_probe_accuracy {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Runs every grid point, writing `run_XXXX/report.json`, `summary.csv` and `series.json`.
/// Failed runs are recorded and the sweep continues.
pub fn run_sweep(base: &Config, sweep: &SweepConfig, out_dir: &Path, no_timing: bool) -> Result<(Vec<RunReport>, SweepSummary)> {
    sweep.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let n = sweep.run_count();
    let reports: Vec<RunReport> = if sweep.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(sweep.parallel)
            .build()
            .map_err(|e| HarnessError::Config(format!("sweep.parallel: {e}")))?;
        pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| one_run(sweep, base, i, out_dir, no_timing))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..n).map(|i| one_run(sweep, base, i, out_dir, no_timing)).collect::<Result<Vec<_>>>()?
    };
    write_report(&reports, out_dir)?;
    let best = argmax(&reports);
    let summary = SweepSummary {
        runs: reports.len(),
        failed: reports.iter().filter(|r| r.status == RunStatus::Failed).count(),
        argmax: best.map(|i| reports[i].run_id.clone()),
        argmax_axes: best.map(|i| reports[i].axes.clone()).unwrap_or_default(),
        argmax_accuracy: best.and_then(|i| reports[i].best_probe_accuracy),
        out_dir: out_dir.to_path_buf(),
    };
    Ok((reports, summary))
}
