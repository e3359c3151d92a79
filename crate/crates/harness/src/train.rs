//! Desk-scale SSL training with an online probe, streaming line-delimited
//! step metrics and producing one [`RunReport`] per run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use viewforge_core::augment::{resize_bilinear, CropRect};
use viewforge_core::loader::{Batch, Loader, LoaderConfig, ViewBuffer, ViewData};
use viewforge_core::losses::{build_instance_batch, BarlowParams, Reduction, SimClrParams, VicRegCoeffs};
use viewforge_core::model::{
    ema_update, offline_probe, online_probe_step, train_step, EncoderSpec, LossSettings, Method, Network,
    OfflineProbeConfig, OfflineProbeResult, Probe, ProbeKind, ProbeMode, ProbeSpec, ProjectorSpec, Sgd, SgdConfig,
    TrainState, COLLAPSE_THRESHOLD,
};
use viewforge_core::rng::{RngKey, RngStream};
use viewforge_core::{Error as CoreError, Image};

use crate::config::Config;
use crate::data::{default_views, loader_config, method, run_seed, DataSource};
use crate::dump;
use crate::error::{HarnessError, Result};
use crate::synth::{toy_records, ToySpec};

/// View slot of the per-sample key used to build instance triples.
const INSTANCE_VIEW: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSettings {
    pub noise_std: f64,
    pub patch_scale: (f64, f64),
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub method: Method,
    pub steps: u64,
    pub seed: u64,
    pub sgd: SgdConfig,
    pub loss: LossSettings,
    /// Encoder widths after the flattened input.
    pub encoder: Vec<usize>,
    pub projector: ProjectorSpec,
    /// Momentum of an EMA target network; the probe then reads the target.
    pub ema: Option<f64>,
    pub probe: ProbeKind,
    pub probe_lr: f64,
    /// Steps at the end of the run over which the final probe accuracy is measured.
    pub probe_window: u64,
    pub log_every: u64,
    pub eval_samples: usize,
    pub offline_epochs: usize,
    pub instance: InstanceSettings,
    pub data: DataSource,
    pub loader: LoaderConfig,
    /// Effective configuration, echoed into the report.
    pub echo: BTreeMap<String, String>,
}

fn reduction(s: &str) -> Result<Reduction> {
    match s {
        "sum" => Ok(Reduction::Sum),
        "mean" => Ok(Reduction::MeanOverPositives),
        other => Err(HarnessError::Config(format!("train.reduction = {other:?}"))),
    }
}

impl TrainSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let method = method(cfg)?;
        let seed = run_seed(cfg)?;
        let crop: usize = cfg.or("train.crop", 12)?;
        let loader = loader_config(cfg, default_views(method, crop), seed)?;
        if loader.resolution.is_some() {
            return Err(HarnessError::Config(
                "loader.resolution changes the input width and cannot drive train".into(),
            ));
        }
        let depth: usize = cfg.or("train.projector_depth", 2)?;
        let projector = ProjectorSpec {
            depth,
            hidden: if depth >= 2 {
                cfg.require("train.projector_hidden")?
            } else {
                cfg.or("train.projector_hidden", 0)?
            },
            output: cfg.or("train.projector_out", 32)?,
        };
        let d_simclr = SimClrParams::default();
        let d_vic = VicRegCoeffs::default();
        let probe = match cfg.get("probe.kind").unwrap_or("linear") {
            "linear" => ProbeKind::Linear,
            "mlp" => ProbeKind::Mlp(cfg.list("probe.hidden")?.unwrap_or(vec![64])),
            other => return Err(HarnessError::Config(format!("probe.kind = {other:?}"))),
        };
        let patch: Vec<f64> = cfg.list("instance.patch_scale")?.unwrap_or(vec![0.05, 0.2]);
        if patch.len() != 2 {
            return Err(HarnessError::Config("instance.patch_scale needs two values".into()));
        }
        let mut echo = cfg.entries().clone();
        echo.insert("run.seed".into(), seed.to_string());
        Ok(Self {
            method,
            steps: cfg.or("train.steps", 2000)?,
            seed,
            sgd: SgdConfig {
                lr: cfg.or("train.lr", 0.05)?,
                momentum: cfg.or("train.momentum", 0.9)?,
                weight_decay: cfg.or("train.weight_decay", 1e-4)?,
                max_grad_norm: Some(cfg.or("train.max_grad_norm", 1.0)?).filter(|m: &f64| *m > 0.0),
            },
            loss: LossSettings {
                simclr: SimClrParams {
                    tau: cfg.or("train.temperature", d_simclr.tau)?,
                    reduction: reduction(cfg.get("train.reduction").unwrap_or("mean"))?,
                },
                vicreg: VicRegCoeffs {
                    alpha: cfg.or("train.vicreg_alpha", d_vic.alpha)?,
                    beta: cfg.or("train.vicreg_beta", d_vic.beta)?,
                    gamma: cfg.or("train.vicreg_gamma", d_vic.gamma)?,
                    epsilon: cfg.or("train.vicreg_epsilon", d_vic.epsilon)?,
                },
                barlow: BarlowParams {
                    alpha: cfg.or("train.barlow_lambd", BarlowParams::default().alpha)?,
                },
            },
            encoder: cfg.list("train.encoder")?.unwrap_or(vec![128, 64]),
            projector,
            ema: cfg.parsed("train.ema")?,
            probe,
            probe_lr: cfg.or("probe.lr", 0.1)?,
            probe_window: cfg.or("probe.window", 200)?,
            log_every: cfg.or("train.log_every", 1)?,
            eval_samples: cfg.or("train.eval_samples", 1000)?,
            offline_epochs: cfg.or("probe.offline_epochs", 0)?,
            instance: InstanceSettings {
                noise_std: cfg.or("instance.noise_std", viewforge_core::losses::DEFAULT_NOISE_STD)?,
                patch_scale: (patch[0], patch[1]),
                size: cfg.or("instance.size", crop)?,
            },
            data: DataSource::from_config(cfg)?,
            loader,
            echo,
        })
    }

    /// Side length of the square images fed to the encoder.
    fn input_side(&self) -> Result<usize> {
        if self.method == Method::InstanceSimClr {
            return Ok(self.instance.size);
        }
        let sizes: Vec<Option<usize>> = self.loader.view_pipelines.iter().map(|p| p.output_size()).collect();
        match sizes[0] {
            Some(s) if sizes.iter().all(|x| *x == Some(s)) => Ok(s),
            _ => Err(HarnessError::Config(
                "every view pipeline needs a crop stage with the same size".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: u64,
    pub mean_loss: f64,
    pub embedding_std: f64,
    pub probe_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub steps_completed: u64,
    pub final_loss: Option<f64>,
    /// Mean per-dimension embedding std over the final probe window.
    pub final_embedding_std: Option<f64>,
    /// Online probe accuracy over the final `probe.window` steps.
    pub probe_accuracy: Option<f64>,
    /// Best per-epoch online probe accuracy.
    pub best_probe_accuracy: Option<f64>,
    /// Online probe on held-out toy images, full view, after training.
    pub eval_accuracy: Option<f64>,
    pub offline_probe: Option<OfflineProbeResult>,
    pub collapsed: bool,
    pub epochs: Vec<EpochSummary>,
    /// Grid coordinates when the run belongs to a sweep.
    pub axes: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
    pub wall_clock_ms: Option<f64>,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    step: u64,
    epoch: u64,
    loss: f64,
    terms: &'a BTreeMap<String, f64>,
    embedding_std: f64,
    collapsed: bool,
    probe_loss: f64,
    probe_accuracy: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory receiving `metrics.jsonl` and `report.json`.
    pub out_dir: Option<PathBuf>,
    pub dump_batches: Option<PathBuf>,
    pub no_timing: bool,
    pub run_id: String,
    pub axes: BTreeMap<String, String>,
}

fn view_matrix(v: &ViewBuffer) -> Array2<f64> {
    let [n, h, w, c] = v.shape;
    let d = h * w * c;
    match &v.data {
        ViewData::U8(data) => Array2::from_shape_fn((n, d), |(i, j)| data[i * d + j] as f64 / 255.0 - 0.5),
        ViewData::F32(data) => Array2::from_shape_fn((n, d), |(i, j)| data[i * d + j] as f64),
    }
}

fn image_rows(images: &[Image]) -> Array2<f64> {
    let d = images[0].data().len();
    Array2::from_shape_fn((images.len(), d), |(i, j)| images[i].data()[j] as f64 / 255.0 - 0.5)
}

fn instance_views(batch: &Batch, seed: u64, s: &InstanceSettings) -> Result<Vec<Array2<f64>>> {
    let mut per_view: [Vec<Image>; 3] = Default::default();
    for (row, &sample) in batch.indices.iter().enumerate() {
        let img = batch.views[0].image(row).ok_or_else(|| {
            HarnessError::Config("instance training needs byte images (no normalize stage)".into())
        })?;
        let key = RngKey::new(seed, batch.epoch, sample as u64, INSTANCE_VIEW);
        let triple = build_instance_batch(&img, s.noise_std, s.patch_scale, s.size, &RngStream::new(key))?;
        for (slot, v) in per_view.iter_mut().zip(triple.views) {
            slot.push(v);
        }
    }
    Ok(per_view.iter().map(|v| image_rows(v)).collect())
}

struct Window {
    correct: f64,
    seen: f64,
    std_sum: f64,
    steps: f64,
}

impl Window {
    fn new() -> Self {
        Self {
            correct: 0.0,
            seen: 0.0,
            std_sum: 0.0,
            steps: 0.0,
        }
    }

    fn accuracy(&self) -> f64 {
        if self.seen == 0.0 {
            0.0
        } else {
            self.correct / self.seen
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?))
}

/// Trains one run. A diverging run (`NanLoss`) yields a report with
/// `status = failed` rather than an error; the caller decides the exit code.
pub fn run_training(settings: &TrainSettings, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    let opened = settings.data.open()?;
    let side = settings.input_side()?;
    let input_dim = side * side * opened.channels;
    let mut dims = vec![input_dim];
    dims.extend(&settings.encoder);
    let network = Network::new(&EncoderSpec::mlp(&dims, true), &settings.projector, settings.seed)?;
    let rep_dim = network.representation_dim();
    let mut state = TrainState::new(network, Sgd::new(settings.sgd), settings.method, settings.loss);
    let mut target = settings.ema.map(|_| state.network.clone());
    let probe_spec = ProbeSpec {
        kind: settings.probe.clone(),
        mode: ProbeMode::Online,
        num_classes: opened.classes.max(2),
    };
    let probe_sgd = SgdConfig {
        lr: settings.probe_lr,
        momentum: 0.9,
        weight_decay: 0.0,
        max_grad_norm: None,
    };
    let mut probe = Probe::new(probe_spec, rep_dim, probe_sgd, settings.seed)?;

    let mut metrics_out = match &opts.out_dir {
        Some(dir) => Some(create(&dir.join("metrics.jsonl"))?),
        None => None,
    };
    let mut dump_out = match &opts.dump_batches {
        Some(p) => {
            let mut w = create(p)?;
            dump::write_header(&mut w).map_err(|e| HarnessError::io(p, e))?;
            Some(w)
        }
        None => None,
    };

    let loader = Loader::new(opened.source, settings.loader.clone())?;
    if loader.batches_per_epoch() == 0 {
        return Err(HarnessError::Config("dataset smaller than one batch with drop_last".into()));
    }
    let mut report = RunReport {
        run_id: opts.run_id.clone(),
        method: settings.method.name().to_string(),
        seed: settings.seed,
        status: RunStatus::Ok,
        error: None,
        steps_completed: 0,
        final_loss: None,
        final_embedding_std: None,
        probe_accuracy: None,
        best_probe_accuracy: None,
        eval_accuracy: None,
        offline_probe: None,
        collapsed: false,
        epochs: Vec::new(),
        axes: opts.axes.clone(),
        config: settings.echo.clone(),
        wall_clock_ms: None,
    };
    let window_start = settings.steps.saturating_sub(settings.probe_window.max(1));
    let mut window = Window::new();
    let mut step = 0u64;
    let mut epoch = 0u64;
    'run: while step < settings.steps {
        let mut ep = Window::new();
        let mut loss_sum = 0.0;
        for batch in loader.epoch(epoch) {
            let batch = batch?;
            if let (Some(w), Some(p)) = (dump_out.as_mut(), opts.dump_batches.as_ref()) {
                dump::write_batch(w, &batch).map_err(|e| HarnessError::io(p, e))?;
            }
            let views = match settings.method {
                Method::InstanceSimClr => instance_views(&batch, settings.seed, &settings.instance)?,
                _ => batch.views.iter().map(view_matrix).collect(),
            };
            let view_refs: Vec<ArrayView2<f64>> = views.iter().map(|v| v.view()).collect();
            let probed = target.as_ref().unwrap_or(&state.network);
            let h = probed.encode(view_refs[0])?;
            let m = match train_step(&mut state, &view_refs) {
                Ok(m) => m,
                Err(CoreError::NanLoss { step }) => {
                    report.status = RunStatus::Failed;
                    report.error = Some(format!("NanLoss: loss diverged at step {step}"));
                    break 'run;
                }
                Err(e) => return Err(e.into()),
            };
            if let (Some(t), Some(mom)) = (target.as_mut(), settings.ema) {
                ema_update(t, &state.network, mom)?;
            }
            let pm = online_probe_step(&mut probe, h.view(), &batch.labels)?;
            let rows = batch.len() as f64;
            ep.correct += pm.accuracy * rows;
            ep.seen += rows;
            ep.std_sum += m.embedding_std;
            ep.steps += 1.0;
            loss_sum += m.loss;
            if step >= window_start {
                window.correct += pm.accuracy * rows;
                window.seen += rows;
                window.std_sum += m.embedding_std;
                window.steps += 1.0;
            }
            if let Some(w) = metrics_out.as_mut() {
                if settings.log_every > 0 && step % settings.log_every == 0 {
                    let rec = StepRecord {
                        step,
                        epoch,
                        loss: m.loss,
                        terms: &m.terms,
                        embedding_std: m.embedding_std,
                        collapsed: m.collapsed,
                        probe_loss: pm.ce_loss,
                        probe_accuracy: pm.accuracy,
                    };
                    serde_json::to_writer(&mut *w, &rec)?;
                    w.write_all(b"\n").map_err(|e| HarnessError::io("metrics.jsonl", e))?;
                }
            }
            report.final_loss = Some(m.loss);
            step += 1;
            report.steps_completed = step;
            if step >= settings.steps {
                break;
            }
        }
        if ep.steps > 0.0 {
            report.epochs.push(EpochSummary {
                epoch,
                steps: ep.steps as u64,
                mean_loss: loss_sum / ep.steps,
                embedding_std: ep.std_sum / ep.steps,
                probe_accuracy: ep.accuracy(),
            });
        }
        epoch += 1;
    }
    if let Some(mut w) = metrics_out {
        w.flush().map_err(|e| HarnessError::io("metrics.jsonl", e))?;
    }
    if let Some(mut w) = dump_out {
        w.flush().map_err(|e| HarnessError::io("dump", e))?;
    }

    if window.steps > 0.0 {
        let std = window.std_sum / window.steps;
        report.final_embedding_std = Some(std);
        report.collapsed = std < COLLAPSE_THRESHOLD;
        report.probe_accuracy = Some(window.accuracy());
    }
    report.best_probe_accuracy = report
        .epochs
        .iter()
        .map(|e| e.probe_accuracy)
        .fold(None, |b: Option<f64>, a| Some(b.map_or(a, |b| b.max(a))));

    if report.status == RunStatus::Ok {
        if let DataSource::Toy(spec) = &settings.data {
            if settings.eval_samples > 0 {
                let eval_spec = ToySpec {
                    samples: settings.eval_samples,
                    ..*spec
                };
                let held_out = toy_records(&eval_spec, spec.samples);
                let images: Vec<Image> = held_out
                    .iter()
                    .map(|r| resize_bilinear(&r.image, CropRect::full(&r.image), side, side))
                    .collect();
                let labels: Vec<u32> = held_out.iter().map(|r| r.label).collect();
                let x = image_rows(&images);
                let encoder = target.as_ref().unwrap_or(&state.network);
                let reps = encoder.encode(x.view())?;
                report.eval_accuracy = Some(probe.accuracy(reps.view(), &labels)?);
                if settings.offline_epochs > 0 {
                    let cfg = OfflineProbeConfig {
                        epochs: settings.offline_epochs,
                        seed: settings.seed,
                        ..OfflineProbeConfig::default()
                    };
                    let spec = ProbeSpec {
                        kind: settings.probe.clone(),
                        mode: ProbeMode::Offline,
                        num_classes: opened.classes.max(2),
                    };
                    report.offline_probe = Some(offline_probe(reps.view(), &labels, &spec, &cfg)?);
                }
            }
        }
    }
    if !opts.no_timing {
        report.wall_clock_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    if let Some(dir) = &opts.out_dir {
        let mut w = create(&dir.join("report.json"))?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n").map_err(|e| HarnessError::io("report.json", e))?;
        w.flush().map_err(|e| HarnessError::io("report.json", e))?;
    }
    Ok(report)
}
