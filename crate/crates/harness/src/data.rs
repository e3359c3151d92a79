//! Sample sources and loader configuration built from a [`Config`].

use std::path::PathBuf;
use std::sync::Arc;

use viewforge_core::augment::{Pipeline, Stage};
use viewforge_core::dataset::DatasetHandle;
use viewforge_core::loader::{Loader, LoaderConfig, ResolutionSchedule, Traversal};
use viewforge_core::model::Method;
use viewforge_core::source::{MemoryDataset, SampleSource};

use crate::config::Config;
use crate::error::{HarnessError, Result};
use crate::synth::{toy_records, ToySpec};

pub const WORKERS_ENV: &str = "VIEWFORGE_WORKERS";

/// Where samples come from: a packed file or the synthetic toy set.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Packed(PathBuf),
    Toy(ToySpec),
}

pub struct OpenedSource {
    pub source: Arc<dyn SampleSource>,
    pub channels: usize,
    pub classes: usize,
}

impl DataSource {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        match cfg.path("data.path") {
            Some(p) => Ok(DataSource::Packed(p)),
            None => Ok(DataSource::Toy(ToySpec::from_config(cfg)?)),
        }
    }

    pub fn open(&self) -> Result<OpenedSource> {
        match self {
            DataSource::Packed(path) => {
                let handle = DatasetHandle::open(path)?;
                let channels = handle.header().channels as usize;
                let mut classes = 0;
                for i in 0..handle.sample_count() {
                    classes = classes.max(handle.descriptor(i)?.label as usize + 1);
                }
                Ok(OpenedSource {
                    source: Arc::new(handle),
                    channels,
                    classes,
                })
            }
            DataSource::Toy(spec) => Ok(OpenedSource {
                source: Arc::new(MemoryDataset::new(toy_records(spec, 0))),
                channels: 1,
                classes: spec.classes,
            }),
        }
    }
}

/// Default views for the toy task: a moderate crop plus a little noise.
pub fn default_views(method: Method, crop: usize) -> Vec<Pipeline> {
    if method == Method::InstanceSimClr {
        return vec![Pipeline::empty()];
    }
    let view = Pipeline::new(vec![
        Stage::RandomResizedCrop {
            scale: (0.4, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            size: crop,
        },
        Stage::noise(0.03),
    ])
    .expect("valid default view");
    vec![view; method.views()]
}

/// `VIEWFORGE_WORKERS`, when set to a count, replaces `loader.num_workers`.
pub fn worker_override(value: Option<&str>) -> Result<Option<usize>> {
    value
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| HarnessError::Config(format!("{WORKERS_ENV}={v:?}: {e}")))
        })
        .transpose()
}

fn parse_traversal(cfg: &Config) -> Result<Traversal> {
    let group = cfg.parsed::<usize>("loader.quasi_group")?;
    match cfg.get("loader.traversal").unwrap_or("random") {
        "sequential" => Ok(Traversal::Sequential),
        "random" => Ok(Traversal::Random),
        "quasi_random" => Ok(Traversal::QuasiRandom { group }),
        other => Err(HarnessError::Config(format!("loader.traversal = {other:?}"))),
    }
}

/// Pipelines from `loader.view0`, `loader.view1`, …; stages separated by `|`.
pub fn parse_views(cfg: &Config) -> Result<Option<Vec<Pipeline>>> {
    let mut views = Vec::new();
    while let Some(text) = cfg.get(&format!("loader.view{}", views.len())) {
        let text = text.replace('|', "\n");
        let p = Pipeline::parse(&text)
            .map_err(|e| HarnessError::Config(format!("loader.view{}: {e}", views.len())))?;
        views.push(p);
    }
    Ok((!views.is_empty()).then_some(views))
}

pub fn loader_config(cfg: &Config, default: Vec<Pipeline>, seed: u64) -> Result<LoaderConfig> {
    let resolution = match cfg.list::<u64>("loader.resolution")? {
        None => None,
        Some(v) if v.len() == 4 => Some(ResolutionSchedule::new(v[0] as usize, v[1] as usize, v[2], v[3])?),
        Some(_) => {
            return Err(HarnessError::Config(
                "loader.resolution = start_res, end_res, start_epoch, end_epoch".into(),
            ))
        }
    };
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = match worker_override(env.as_deref())? {
        Some(w) => w,
        None => cfg.or("loader.num_workers", 1)?,
    };
    let config = LoaderConfig {
        batch_size: cfg.or("loader.batch_size", 64)?,
        num_workers: workers,
        traversal: parse_traversal(cfg)?,
        seed: cfg.or("loader.seed", seed)?,
        drop_last: cfg.or("loader.drop_last", true)?,
        view_pipelines: parse_views(cfg)?.unwrap_or(default),
        prefetch_depth: cfg.or("loader.prefetch_depth", 2)?,
        resolution,
    };
    config.validate()?;
    Ok(config)
}

/// Method named by `train.method`, SimCLR when absent.
pub fn method(cfg: &Config) -> Result<Method> {
    cfg.get("train.method")
        .map(|m| m.parse::<Method>().map_err(|e| HarnessError::Config(e.to_string())))
        .unwrap_or(Ok(Method::SimClr))
}

/// Run seed: `run.seed`, else 0.
pub fn run_seed(cfg: &Config) -> Result<u64> {
    cfg.or("run.seed", 0)
}

/// Loader described by the config file at `path`, exactly as `train` iterates it.
pub fn open_loader(path: impl AsRef<std::path::Path>) -> Result<Loader> {
    let cfg = Config::load(path)?;
    open_loader_from(&cfg)
}

pub fn open_loader_from(cfg: &Config) -> Result<Loader> {
    let opened = DataSource::from_config(cfg)?.open()?;
    let method = method(cfg)?;
    let crop = cfg.or("train.crop", 12)?;
    let lc = loader_config(cfg, default_views(method, crop), run_seed(cfg)?)?;
    Ok(Loader::new(opened.source, lc)?)
}
