use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Gradients, LayerSpec, Mlp, Sgd, SgdConfig};
use crate::error::{Error, Result};
use crate::rng::{domains, RngKey, RngStream};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "hidden", rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Mlp(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Online,
    Offline,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub mode: ProbeMode,
    pub num_classes: usize,
}

impl ProbeSpec {
    pub fn linear(num_classes: usize, mode: ProbeMode) -> Self {
        Self {
            kind: ProbeKind::Linear,
            mode,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidParam("a probe needs at least two classes".into()));
        }
        if let ProbeKind::Mlp(hidden) = &self.kind {
            if hidden.is_empty() || hidden.contains(&0) {
                return Err(Error::InvalidParam("MLP probe needs non-empty positive hidden widths".into()));
            }
        }
        Ok(())
    }

    fn layers(&self, in_dim: usize) -> Vec<LayerSpec> {
        let mut dims = vec![in_dim];
        if let ProbeKind::Mlp(hidden) = &self.kind {
            dims.extend(hidden);
        }
        dims.push(self.num_classes);
        (0..dims.len() - 1)
            .map(|i| LayerSpec {
                in_dim: dims[i],
                out_dim: dims[i + 1],
                relu: i + 2 < dims.len(),
            })
            .collect()
    }
}

/// Classifier on backbone representations, with its own optimizer.
#[derive(Clone, Debug)]
pub struct Probe {
    pub spec: ProbeSpec,
    pub mlp: Mlp,
    pub optimizer: Sgd,
    correct: u64,
    seen: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub ce_loss: f64,
    /// Accuracy on this batch, measured before the update.
    pub accuracy: f64,
    /// Accuracy over every batch since the last reset.
    pub running_accuracy: f64,
}

impl Probe {
    pub fn new(spec: ProbeSpec, in_dim: usize, sgd: SgdConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        if in_dim == 0 {
            return Err(Error::ShapeMismatch("probe input width must be positive".into()));
        }
        let mlp = Mlp::init(&spec.layers(in_dim), seed, domains::PROBE_INIT, 0);
        Ok(Self {
            spec,
            mlp,
            optimizer: Sgd::new(sgd),
            correct: 0,
            seen: 0,
        })
    }

    pub fn logits(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.mlp.forward(h)
    }

    pub fn predict(&self, h: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(h)?))
    }

    pub fn accuracy(&self, h: ArrayView2<f64>, labels: &[u32]) -> Result<f64> {
        check_labels(&h, labels, self.spec.num_classes)?;
        let pred = self.predict(h)?;
        Ok(hits(&pred, labels) as f64 / labels.len() as f64)
    }

    pub fn running_accuracy(&self) -> f64 {
        if self.seen == 0 {
            0.0
        } else {
            self.correct as f64 / self.seen as f64
        }
    }

    pub fn reset_running(&mut self) {
        self.correct = 0;
        self.seen = 0;
    }

    /// One mean softmax cross-entropy step. Returns the loss and batch hits before the update.
    fn fit_batch(&mut self, h: ArrayView2<f64>, labels: &[u32]) -> Result<(f64, usize)> {
        check_labels(&h, labels, self.spec.num_classes)?;
        self.mlp.check_input(&h)?;
        let (logits, tape) = self.mlp.forward_taped(h.to_owned());
        let n = labels.len() as f64;
        let mut grad = softmax_rows(&logits);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            loss -= grad[[i, y as usize]].max(f64::MIN_POSITIVE).ln();
            grad[[i, y as usize]] -= 1.0;
        }
        grad /= n;
        let correct = hits(&argmax_rows(&logits), labels);
        let (layers, _) = self.mlp.backward(&tape, grad);
        self.optimizer.step(&mut self.mlp, &Gradients { layers })?;
        Ok((loss / n, correct))
    }
}

fn check_labels(h: &ArrayView2<f64>, labels: &[u32], num_classes: usize) -> Result<()> {
    if h.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if h.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} representations for {} labels",
            h.nrows(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::InvalidLabel { label, num_classes });
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// First index of the row maximum.
fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

fn hits(pred: &[usize], labels: &[u32]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| **p == **l as usize).count()
}

/// One probe step on detached representations; the encoder is never touched.
pub fn online_probe_step(probe: &mut Probe, h: ArrayView2<f64>, labels: &[u32]) -> Result<ProbeMetrics> {
    if probe.spec.mode != ProbeMode::Online {
        return Err(Error::InvalidParam("online_probe_step needs an online probe".into()));
    }
    let (ce_loss, correct) = probe.fit_batch(h, labels)?;
    probe.correct += correct as u64;
    probe.seen += labels.len() as u64;
    Ok(ProbeMetrics {
        ce_loss,
        accuracy: correct as f64 / labels.len() as f64,
        running_accuracy: probe.running_accuracy(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Seeds the split, the init and the per-epoch shuffles.
    pub seed: u64,
    pub val_fraction: f64,
    /// Standardize features with train-split statistics.
    pub standardize: bool,
}

impl Default for OfflineProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            sgd: SgdConfig {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
                max_grad_norm: None,
            },
            seed: 0,
            val_fraction: 0.2,
            standardize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineProbeResult {
    pub best_val_accuracy: f64,
    /// First epoch reaching the best validation accuracy.
    pub best_epoch: usize,
    pub final_val_accuracy: f64,
    pub curve: Vec<EpochPoint>,
}

/// Trains a fresh probe on frozen representations with a fixed train/validation split.
pub fn offline_probe(
    reps: ArrayView2<f64>,
    labels: &[u32],
    spec: &ProbeSpec,
    cfg: &OfflineProbeConfig,
) -> Result<OfflineProbeResult> {
    spec.validate()?;
    check_labels(&reps, labels, spec.num_classes)?;
    let n = reps.nrows();
    if n < 2 {
        return Err(Error::InsufficientBatch(n));
    }
    if !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0) || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParam(
            "offline probe needs 0 < val_fraction < 1, batch_size >= 1, epochs >= 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(RngKey::domain(cfg.seed, 0, domains::PROBE_SPLIT)).stage(0));
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let (train_idx, val_idx) = order.split_at(n - n_val);

    let mut train_x = reps.select(Axis(0), train_idx);
    let mut val_x = reps.select(Axis(0), val_idx);
    if cfg.standardize {
        let mean = train_x.mean_axis(Axis(0)).expect("non-empty");
        let std: Array1<f64> = train_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        train_x = (train_x - &mean) / &std;
        val_x = (val_x - &mean) / &std;
    }
    let train_y: Vec<u32> = train_idx.iter().map(|&i| labels[i]).collect();
    let val_y: Vec<u32> = val_idx.iter().map(|&i| labels[i]).collect();

    let spec = ProbeSpec {
        mode: ProbeMode::Offline,
        ..spec.clone()
    };
    let mut probe = Probe::new(spec, reps.ncols(), cfg.sgd, cfg.seed)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut rows: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 0..cfg.epochs {
        rows.shuffle(&mut RngStream::new(RngKey::domain(cfg.seed, epoch as u64, domains::PROBE_SHUFFLE)).stage(0));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in rows.chunks(cfg.batch_size) {
            let x = train_x.select(Axis(0), chunk);
            let y: Vec<u32> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, c) = probe.fit_batch(x.view(), &y)?;
            loss_sum += loss * chunk.len() as f64;
            correct += c;
        }
        curve.push(EpochPoint {
            epoch,
            train_loss: loss_sum / rows.len() as f64,
            train_accuracy: correct as f64 / rows.len() as f64,
            val_accuracy: probe.accuracy(val_x.view(), &val_y)?,
        });
    }
    let best = curve
        .iter()
        .fold(&curve[0], |b, p| if p.val_accuracy > b.val_accuracy { p } else { b });
    Ok(OfflineProbeResult {
        best_val_accuracy: best.val_accuracy,
        best_epoch: best.epoch,
        final_val_accuracy: curve.last().expect("epochs >= 1").val_accuracy,
        curve,
    })
}
