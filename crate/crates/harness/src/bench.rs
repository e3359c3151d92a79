//! Loader throughput across cumulative augmentation presets.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use viewforge_core::augment::{Pipeline, Stage};
use viewforge_core::loader::{bench_throughput, ThroughputReport};

use crate::config::Config;
use crate::data::{loader_config, run_seed, DataSource};
use crate::error::{HarnessError, Result};

/// Preset names in column order. Each preset adds one stage to the previous one.
pub const PRESETS: [&str; 5] = ["Crops", "+Blur", "+Gray.", "+Sol.", "+Jitter"];

/// Pipeline for preset `index` of [`PRESETS`] at output size `crop`.
pub fn preset_pipeline(index: usize, crop: usize) -> Result<Pipeline> {
    let mut stages = vec![Stage::crop(crop), Stage::flip()];
    let extra = [Stage::blur(), Stage::grayscale(), Stage::solarize(), Stage::jitter()];
    if index >= PRESETS.len() {
        return Err(HarnessError::Usage(format!("no preset #{index}")));
    }
    stages.extend(extra.into_iter().take(index));
    Ok(Pipeline::new(stages)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetResult {
    pub preset: String,
    pub report: ThroughputReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub presets: Vec<PresetResult>,
    pub config: BTreeMap<String, String>,
}

pub fn run_bench(cfg: &Config) -> Result<BenchOutput> {
    let data = DataSource::from_config(cfg)?;
    if !matches!(data, DataSource::Packed(_)) {
        return Err(HarnessError::Config("bench needs a packed dataset in data.path".into()));
    }
    let source = data.open()?.source;
    let crop: usize = cfg.or("bench.crop", 64)?;
    let views: usize = cfg.or("bench.views", 2)?;
    let epochs: u64 = cfg.or("bench.epochs", 1)?;
    let mut presets = Vec::with_capacity(PRESETS.len());
    for (i, name) in PRESETS.iter().enumerate() {
        let pipeline = preset_pipeline(i, crop)?;
        let lc = loader_config(cfg, vec![pipeline; views], run_seed(cfg)?)?;
        let report = bench_throughput(source.clone(), lc, epochs)?;
        presets.push(PresetResult {
            preset: name.to_string(),
            report,
        });
    }
    Ok(BenchOutput {
        presets,
        config: cfg.entries().clone(),
    })
}

/// Human-readable comparison, one row per preset.
pub fn write_table(w: &mut impl Write, out: &BenchOutput) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<9} {:>10} {:>12} {:>10} {:>10} {:>10}",
        "preset", "wall_ms", "images/s", "decode%", "augment%", "assemble%"
    )?;
    for p in &out.presets {
        let r = &p.report;
        writeln!(
            w,
            "{:<9} {:>10.1} {:>12.1} {:>10.1} {:>10.1} {:>10.1}",
            p.preset,
            r.wall_ms,
            r.images_per_sec,
            100.0 * r.stage_share.decode,
            100.0 * r.stage_share.augment,
            100.0 * r.stage_share.assemble
        )?;
    }
    Ok(())
}
