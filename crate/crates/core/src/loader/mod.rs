//! Multi-worker loader producing `V` augmented views per sample.
//!
//! Batches are a pure function of `(config, dataset, epoch, batch_index)`:
//! every view draws from the key `(seed, epoch, sample, view)` and workers
//! hand finished batches to an in-order reassembly buffer, so the delivered
//! stream does not depend on `num_workers` or `prefetch_depth`.

mod bench;
mod plan;
mod workers;

pub use bench::{bench_throughput, StageMillis, ThroughputReport};
pub use plan::{build_epoch_plan, default_quasi_group, resolution_at, ResolutionSchedule, Traversal};
pub use workers::EpochIter;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, Pipeline, View};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{RngKey, RngStream};
use crate::source::SampleSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoaderConfig {
    pub batch_size: usize,
    /// Worker threads; `0` assembles batches on the consumer thread.
    pub num_workers: usize,
    pub traversal: Traversal,
    pub seed: u64,
    pub drop_last: bool,
    /// One pipeline per view. An empty pipeline passes the decoded image through.
    pub view_pipelines: Vec<Pipeline>,
    /// Finished batches buffered ahead of the consumer.
    pub prefetch_depth: usize,
    #[serde(default)]
    pub resolution: Option<ResolutionSchedule>,
}

impl LoaderConfig {
    pub fn new(batch_size: usize, view_pipelines: Vec<Pipeline>) -> Self {
        Self {
            batch_size,
            num_workers: 1,
            traversal: Traversal::Random,
            seed: 0,
            drop_last: false,
            view_pipelines,
            prefetch_depth: 2,
            resolution: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be at least 1".into()));
        }
        if self.view_pipelines.is_empty() {
            return Err(Error::InvalidParam("at least one view pipeline is required".into()));
        }
        if self.prefetch_depth == 0 {
            return Err(Error::InvalidParam("prefetch_depth must be at least 1".into()));
        }
        if let Traversal::QuasiRandom { group: Some(0) } = self.traversal {
            return Err(Error::InvalidParam("quasi-random group size must be at least 1".into()));
        }
        if let Some(s) = &self.resolution {
            s.validate()?;
        }
        Ok(())
    }

    pub fn views(&self) -> usize {
        self.view_pipelines.len()
    }
}

/// Pixel storage of one view across a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// `batch × height × width × channels`, row-major and channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBuffer {
    pub shape: [usize; 4],
    pub data: ViewData,
}

impl ViewBuffer {
    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            ViewData::U8(d) => Some(d),
            ViewData::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            ViewData::F32(d) => Some(d),
            ViewData::U8(_) => None,
        }
    }

    /// Row `i` as `f64` values (bytes are scaled to `[0, 1]`).
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        let range = i * per..(i + 1) * per;
        match &self.data {
            ViewData::U8(d) => d[range].iter().map(|&v| v as f64 / 255.0).collect(),
            ViewData::F32(d) => d[range].iter().map(|&v| v as f64).collect(),
        }
    }

    /// Row `i` as an image, for byte views.
    pub fn image(&self, i: usize) -> Option<Image> {
        let [_, h, w, c] = self.shape;
        let d = self.as_u8()?;
        Image::new(h, w, c, d[i * h * w * c..(i + 1) * h * w * c].to_vec()).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub views: Vec<ViewBuffer>,
    pub labels: Vec<u32>,
    /// Source sample index of every row.
    pub indices: Vec<usize>,
    pub epoch: u64,
    pub batch_index: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Time spent per stage while assembling batches, summed over workers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub decode: Duration,
    pub augment: Duration,
    pub assemble: Duration,
}

impl StageTimes {
    pub fn add(&mut self, other: &StageTimes) {
        self.decode += other.decode;
        self.augment += other.augment;
        self.assemble += other.assemble;
    }
}

/// Everything needed to build any batch of one epoch.
pub(crate) struct EpochJob {
    pub source: Arc<dyn SampleSource>,
    pub pipelines: Vec<Pipeline>,
    pub plan: Vec<usize>,
    pub batch_size: usize,
    pub num_batches: usize,
    pub seed: u64,
    pub epoch: u64,
}

impl EpochJob {
    pub fn rows(&self, batch_index: usize) -> &[usize] {
        let start = batch_index * self.batch_size;
        let end = (start + self.batch_size).min(self.plan.len());
        &self.plan[start..end]
    }

    pub fn build(&self, batch_index: usize) -> (Result<Batch>, StageTimes) {
        let mut times = StageTimes::default();
        let res = self.build_timed(batch_index, &mut times);
        (res, times)
    }

    fn build_timed(&self, batch_index: usize, times: &mut StageTimes) -> Result<Batch> {
        let rows = self.rows(batch_index);
        let v_count = self.pipelines.len();
        let mut per_view: Vec<Vec<View>> = vec![Vec::with_capacity(rows.len()); v_count];
        let mut labels = Vec::with_capacity(rows.len());
        for &index in rows {
            let t = Instant::now();
            let record = self.source.read(index).map_err(|e| e.at_sample(index))?;
            times.decode += t.elapsed();
            labels.push(record.label);
            let t = Instant::now();
            for (v, pipeline) in self.pipelines.iter().enumerate() {
                let view = if pipeline.is_empty() {
                    View::Bytes(record.image.clone())
                } else {
                    let key = RngKey::new(self.seed, self.epoch, index as u64, v as u64);
                    apply_pipeline(&record.image, pipeline, &RngStream::new(key))
                        .map_err(|e| e.at_sample(index))?
                };
                per_view[v].push(view);
            }
            times.augment += t.elapsed();
        }
        let t = Instant::now();
        let views = per_view
            .into_iter()
            .map(|views| stack(&views, rows))
            .collect::<Result<Vec<_>>>()?;
        times.assemble += t.elapsed();
        Ok(Batch {
            views,
            labels,
            indices: rows.to_vec(),
            epoch: self.epoch,
            batch_index,
        })
    }
}

fn stack(views: &[View], rows: &[usize]) -> Result<ViewBuffer> {
    let (h, w, c) = views[0].shape();
    for (view, &index) in views.iter().zip(rows) {
        if view.shape() != (h, w, c) {
            return Err(Error::ShapeMismatch(format!(
                "sample {index} produced a {:?} view, batch expects {:?}; add a crop stage for variable-resolution data",
                view.shape(),
                (h, w, c)
            )));
        }
    }
    let shape = [views.len(), h, w, c];
    let data = match &views[0] {
        View::Bytes(_) => {
            let mut out = Vec::with_capacity(views.len() * h * w * c);
            for v in views {
                match v {
                    View::Bytes(img) => out.extend_from_slice(img.data()),
                    View::Float(_) => unreachable!("one pipeline yields one view type"),
                }
            }
            ViewData::U8(out)
        }
        View::Float(_) => {
            let mut out = Vec::with_capacity(views.len() * h * w * c);
            for v in views {
                match v {
                    View::Float(img) => out.extend_from_slice(img.data()),
                    View::Bytes(_) => unreachable!("one pipeline yields one view type"),
                }
            }
            ViewData::F32(out)
        }
    };
    Ok(ViewBuffer { shape, data })
}

/// A configured loader over one sample source. Not shareable across consumers.
pub struct Loader {
    source: Arc<dyn SampleSource>,
    config: LoaderConfig,
}

impl Loader {
    pub fn new(source: Arc<dyn SampleSource>, config: LoaderConfig) -> Result<Self> {
        config.validate()?;
        if source.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { source, config })
    }

    pub fn config(&self) -> &LoaderConfig {
        &self.config
    }

    pub fn source(&self) -> &Arc<dyn SampleSource> {
        &self.source
    }

    pub fn sample_count(&self) -> usize {
        self.source.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        let n = self.sample_count();
        let b = self.config.batch_size;
        if self.config.drop_last {
            n / b
        } else {
            n.div_ceil(b)
        }
    }

    /// Crop side length in force for `epoch`, if a schedule is configured.
    pub fn resolution(&self, epoch: u64) -> Option<usize> {
        self.config.resolution.as_ref().map(|s| resolution_at(s, epoch))
    }

    fn job(&self, epoch: u64) -> EpochJob {
        let n = self.sample_count();
        let traversal = match self.config.traversal {
            Traversal::QuasiRandom { group: None } => Traversal::QuasiRandom {
                group: Some(default_quasi_group(self.source.mean_sample_bytes())),
            },
            t => t,
        };
        let pipelines = match self.resolution(epoch) {
            Some(res) => self.config.view_pipelines.iter().map(|p| p.with_crop_size(res)).collect(),
            None => self.config.view_pipelines.clone(),
        };
        EpochJob {
            source: Arc::clone(&self.source),
            pipelines,
            plan: build_epoch_plan(n, traversal, self.config.seed, epoch),
            batch_size: self.config.batch_size,
            num_batches: self.batches_per_epoch(),
            seed: self.config.seed,
            epoch,
        }
    }

    /// Ordered batch stream of one epoch. Dropping the iterator stops the workers.
    pub fn epoch(&self, epoch: u64) -> EpochIter {
        EpochIter::start(
            self.job(epoch),
            self.config.num_workers,
            self.config.prefetch_depth,
        )
    }

    /// Builds a single batch on the calling thread.
    pub fn batch(&self, epoch: u64, batch_index: usize) -> Result<Batch> {
        let job = self.job(epoch);
        if batch_index >= job.num_batches {
            return Err(Error::Index {
                index: batch_index,
                len: job.num_batches,
            });
        }
        job.build(batch_index).0
    }
}
