//! Desk-scale encoder and projector with reverse-mode gradients, the SSL
//! training step, EMA target updates and linear/MLP probes.
//!
//! Everything runs in `f64`. Rows of an input matrix are samples, columns are
//! flattened pixels; an affine layer computes `x·W + b` with `W` stored `in × out`.

mod optim;
mod probe;
mod train;

pub use optim::{backward_and_step, Sgd, SgdConfig};
pub use probe::{
    offline_probe, online_probe_step, EpochPoint, OfflineProbeConfig, OfflineProbeResult, Probe, ProbeKind, ProbeMetrics,
    ProbeMode, ProbeSpec,
};
pub use train::{
    embedding_std, evaluate_loss, stack_views, train_step, LossSettings, Method, StepMetrics, TrainState,
    COLLAPSE_THRESHOLD,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domains, RngKey, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub relu: bool,
}

/// Affine layers, each optionally followed by ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub layers: Vec<LayerSpec>,
}

impl EncoderSpec {
    /// `dims = [input, hidden.., output]`, ReLU after every layer but the
    /// last unless `relu_last`.
    pub fn mlp(dims: &[usize], relu_last: bool) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| LayerSpec {
                in_dim: dims[i],
                out_dim: dims[i + 1],
                relu: i + 1 < n || relu_last,
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("encoder needs at least one layer".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ShapeMismatch(format!(
                    "encoder layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        if self.layers.iter().any(|l| l.in_dim == 0 || l.out_dim == 0) {
            return Err(Error::ShapeMismatch("layer dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Projector MLP; `depth = 0` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub depth: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ProjectorSpec {
    pub fn identity() -> Self {
        Self {
            depth: 0,
            hidden: 0,
            output: 0,
        }
    }

    pub fn layers(&self, input: usize) -> Vec<LayerSpec> {
        (0..self.depth)
            .map(|i| LayerSpec {
                in_dim: if i == 0 { input } else { self.hidden },
                out_dim: if i + 1 == self.depth { self.output } else { self.hidden },
                relu: i + 1 < self.depth,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub relu: bool,
}

impl Affine {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            weight: Array2::zeros((spec.in_dim, spec.out_dim)),
            bias: Array1::zeros(spec.out_dim),
            relu: spec.relu,
        }
    }

    /// Uniform weights with bound `sqrt(6/in)` before a ReLU, `sqrt(3/in)`
    /// otherwise; uniform bias with bound `1/sqrt(in)`.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_dim as f64;
        let bound = (if spec.relu { 6.0 } else { 3.0 } / fan_in).sqrt();
        let weight = Array2::from_shape_simple_fn((spec.in_dim, spec.out_dim), || rng.random_range(-bound..bound));
        let b = 1.0 / fan_in.sqrt();
        let bias = Array1::from_shape_simple_fn(spec.out_dim, || rng.random_range(-b..b));
        Self {
            weight,
            bias,
            relu: spec.relu,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug)]
struct LayerTape {
    input: Array2<f64>,
    /// Kept only for ReLU layers.
    active: Option<Array2<bool>>,
}

/// A chain of affine layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    pub fn init(specs: &[LayerSpec], seed: u64, domain: u64, offset: u64) -> Self {
        let stream = RngStream::new(RngKey::domain(seed, 0, domain));
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Affine::init(*s, &mut stream.stage(offset + i as u64)))
            .collect();
        Self { layers }
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if let Some(first) = self.layers.first() {
            if x.ncols() != first.in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "input has {} columns, first layer expects {}",
                    x.ncols(),
                    first.in_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut cur = x.to_owned();
        for l in &self.layers {
            cur = cur.dot(&l.weight) + &l.bias;
            if l.relu {
                cur.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(cur)
    }

    fn forward_taped(&self, x: Array2<f64>) -> (Array2<f64>, Vec<LayerTape>) {
        let mut tape = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for l in &self.layers {
            let mut out = cur.dot(&l.weight) + &l.bias;
            let active = l.relu.then(|| {
                let mask = out.mapv(|v| v > 0.0);
                out.mapv_inplace(|v| v.max(0.0));
                mask
            });
            tape.push(LayerTape { input: cur, active });
            cur = out;
        }
        (cur, tape)
    }

    /// Returns per-layer gradients and the gradient with respect to the input.
    fn backward(&self, tape: &[LayerTape], grad_out: Array2<f64>) -> (Vec<LayerGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (l, t) in self.layers.iter().zip(tape).rev() {
            if let Some(mask) = &t.active {
                g.zip_mut_with(mask, |v, &on| {
                    if !on {
                        *v = 0.0
                    }
                });
            }
            grads.push(LayerGrad {
                weight: t.input.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            g = g.dot(&l.weight.t());
        }
        grads.reverse();
        (grads, g)
    }
}

/// Anything holding trainable affine layers.
pub trait Layers {
    fn layers(&self) -> Vec<&Affine>;
    fn layers_mut(&mut self) -> Vec<&mut Affine>;

    /// All parameters flattened layer by layer, weights before biases.
    fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum();
        if values.len() != total {
            return Err(Error::ShapeMismatch(format!("{} values for {total} parameters", values.len())));
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().expect("sized"));
        }
        Ok(())
    }
}

impl Layers for Mlp {
    fn layers(&self) -> Vec<&Affine> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Affine> {
        self.layers.iter_mut().collect()
    }
}

/// Gradients of one backward pass, in [`Layers::layers`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weight.iter());
            out.extend(g.bias.iter());
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Tape {
    encoder: Vec<LayerTape>,
    projector: Vec<LayerTape>,
}

/// Backbone representations `h` and projector outputs `z` for the same rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub h: Array2<f64>,
    pub z: Array2<f64>,
}

/// Encoder `f` followed by projector `g`; probes read `h = f(x)`, losses read `z = g(h)`.
#[derive(Clone, Debug)]
pub struct Network {
    pub encoder: Mlp,
    pub projector: Mlp,
    tape: Option<Tape>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.encoder == other.encoder && self.projector == other.projector
    }
}

impl Network {
    pub fn new(encoder: &EncoderSpec, projector: &ProjectorSpec, seed: u64) -> Result<Self> {
        encoder.validate()?;
        if projector.depth > 0 && (projector.output == 0 || (projector.depth > 1 && projector.hidden == 0)) {
            return Err(Error::ShapeMismatch("projector widths must be positive".into()));
        }
        let enc = Mlp::init(&encoder.layers, seed, domains::WEIGHT_INIT, 0);
        let proj = Mlp::init(
            &projector.layers(encoder.output_dim()),
            seed,
            domains::WEIGHT_INIT,
            encoder.layers.len() as u64,
        );
        Ok(Self::from_parts(enc, proj))
    }

    pub fn from_parts(encoder: Mlp, projector: Mlp) -> Self {
        Self {
            encoder,
            projector,
            tape: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn representation_dim(&self) -> usize {
        self.encoder.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector.layers.last().map_or(self.representation_dim(), |l| l.out_dim())
    }

    /// Forward pass recording a tape for [`Network::backward`].
    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<Forward> {
        self.encoder.check_input(&x)?;
        let (h, enc_tape) = self.encoder.forward_taped(x.to_owned());
        let (z, proj_tape) = self.projector.forward_taped(h.clone());
        self.tape = Some(Tape {
            encoder: enc_tape,
            projector: proj_tape,
        });
        Ok(Forward { h, z })
    }

    /// Backbone representations without recording a tape.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward(x)
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Forward> {
        let h = self.encoder.forward(x)?;
        let z = self.projector.forward(h.view())?;
        Ok(Forward { h, z })
    }

    /// Reverse-mode pass from `dL/dz`; consumes the tape of the last forward.
    pub fn backward(&mut self, dz: &Array2<f64>) -> Result<Gradients> {
        let tape = self.tape.take().ok_or(Error::StaleTape)?;
        let rows = tape.encoder.first().map_or(0, |t| t.input.nrows());
        if dz.dim() != (rows, self.embedding_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "dL/dz is {:?}, forward produced {:?}",
                dz.dim(),
                (rows, self.embedding_dim())
            )));
        }
        let (proj_grads, dh) = self.projector.backward(&tape.projector, dz.clone());
        let (mut grads, _) = self.encoder.backward(&tape.encoder, dh);
        grads.extend(proj_grads);
        Ok(Gradients { layers: grads })
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }
}

impl Layers for Network {
    fn layers(&self) -> Vec<&Affine> {
        self.encoder.layers.iter().chain(&self.projector.layers).collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Affine> {
        self.encoder.layers.iter_mut().chain(self.projector.layers.iter_mut()).collect()
    }
}

/// `target ← m·target + (1 − m)·online`, elementwise.
pub fn ema_update<L: Layers>(target: &mut L, online: &L, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidParam(format!("EMA momentum {m} outside [0, 1]")));
    }
    let src = online.layers();
    let mut dst = target.layers_mut();
    if src.len() != dst.len()
        || src
            .iter()
            .zip(dst.iter())
            .any(|(a, b)| a.weight.dim() != b.weight.dim() || a.bias.len() != b.bias.len())
    {
        return Err(Error::ShapeMismatch("EMA target and online layers differ".into()));
    }
    for (t, o) in dst.iter_mut().zip(src) {
        t.weight.zip_mut_with(&o.weight, |a, &b| *a = m * *a + (1.0 - m) * b);
        t.bias.zip_mut_with(&o.bias, |a, &b| *a = m * *a + (1.0 - m) * b);
    }
    Ok(())
}
