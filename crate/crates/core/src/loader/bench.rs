use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Loader, LoaderConfig, StageTimes};
use crate::error::{Error, Result};
use crate::source::SampleSource;

/// Milliseconds per stage, summed over all workers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMillis {
    pub decode: f64,
    pub augment: f64,
    pub assemble: f64,
}

impl StageMillis {
    fn from_times(t: &StageTimes) -> Self {
        Self {
            decode: t.decode.as_secs_f64() * 1e3,
            augment: t.augment.as_secs_f64() * 1e3,
            assemble: t.assemble.as_secs_f64() * 1e3,
        }
    }

    pub fn total(&self) -> f64 {
        self.decode + self.augment + self.assemble
    }

    fn shares(&self) -> Self {
        let total = self.total();
        if total == 0.0 {
            return Self::default();
        }
        Self {
            decode: self.decode / total,
            augment: self.augment / total,
            assemble: self.assemble / total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub images: usize,
    pub epochs: u64,
    pub wall_ms: f64,
    pub images_per_sec: f64,
    pub stage_ms: StageMillis,
    /// Fractions of the summed stage time.
    pub stage_share: StageMillis,
    pub config: LoaderConfig,
}

/// Runs one warm-up epoch, then times `epochs` full passes without a model.
pub fn bench_throughput(source: Arc<dyn SampleSource>, config: LoaderConfig, epochs: u64) -> Result<ThroughputReport> {
    if epochs == 0 {
        return Err(Error::InvalidParam("bench needs at least one measured epoch".into()));
    }
    let loader = Loader::new(source, config.clone())?;
    for batch in loader.epoch(0) {
        batch?;
    }
    let mut images = 0;
    let mut times = StageTimes::default();
    let start = Instant::now();
    for epoch in 1..=epochs {
        let mut it = loader.epoch(epoch);
        for batch in it.by_ref() {
            images += batch?.len();
        }
        times.add(&it.stage_times());
    }
    let wall = start.elapsed().as_secs_f64();
    let stage_ms = StageMillis::from_times(&times);
    Ok(ThroughputReport {
        images,
        epochs,
        wall_ms: wall * 1e3,
        images_per_sec: if wall > 0.0 { images as f64 / wall } else { f64::INFINITY },
        stage_ms,
        stage_share: stage_ms.shares(),
        config,
    })
}
