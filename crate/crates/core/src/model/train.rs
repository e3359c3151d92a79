use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{backward_and_step, Network, Sgd};
use crate::error::{Error, Result};
use crate::losses::{
    barlow_loss, build_pair_relation, simclr_loss, vicreg_loss, BarlowParams, RelationMatrix, SimClrParams,
    VicRegCoeffs,
};

/// A run is flagged collapsed when the mean per-dimension embedding std falls below this.
pub const COLLAPSE_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SimClr,
    VicReg,
    Barlow,
    /// Three views per source: two noisy positives and one patch negative.
    InstanceSimClr,
}

impl Method {
    pub fn views(self) -> usize {
        match self {
            Method::InstanceSimClr => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SimClr => "simclr",
            Method::VicReg => "vicreg",
            Method::Barlow => "barlow",
            Method::InstanceSimClr => "instance_simclr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "simclr" => Ok(Method::SimClr),
            "vicreg" => Ok(Method::VicReg),
            "barlow" | "barlow_twins" => Ok(Method::Barlow),
            "instance_simclr" | "instance" => Ok(Method::InstanceSimClr),
            other => Err(Error::InvalidParam(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub simclr: SimClrParams,
    pub vicreg: VicRegCoeffs,
    pub barlow: BarlowParams,
}

pub struct TrainState {
    pub network: Network,
    pub optimizer: Sgd,
    pub method: Method,
    pub loss: LossSettings,
    pub step: u64,
}

impl TrainState {
    pub fn new(network: Network, optimizer: Sgd, method: Method, loss: LossSettings) -> Self {
        Self {
            network,
            optimizer,
            method,
            loss,
            step: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
    /// Mean over embedding dimensions of the per-dimension std of `z`.
    pub embedding_std: f64,
    pub collapsed: bool,
}

/// Mean over columns of the unbiased column std.
pub fn embedding_std(z: &Array2<f64>) -> f64 {
    if z.nrows() < 2 || z.ncols() == 0 {
        return 0.0;
    }
    let stds = z.std_axis(Axis(0), 1.0);
    stds.mean().unwrap_or(0.0)
}

fn check_views(method: Method, views: &[ArrayView2<f64>]) -> Result<(usize, usize)> {
    if views.len() != method.views() {
        return Err(Error::ViewCountMismatch {
            expected: method.views(),
            actual: views.len(),
        });
    }
    let dim = views[0].dim();
    if let Some(v) = views.iter().find(|v| v.dim() != dim) {
        return Err(Error::ShapeMismatch(format!("views of shape {:?} and {:?}", dim, v.dim())));
    }
    Ok(dim)
}

/// Row layout fed to the network: pairs and triples are interleaved per
/// source (`x₀⁽⁰⁾, x₀⁽¹⁾, x₁⁽⁰⁾, …`); Barlow stacks all of view 0 above view 1.
pub fn stack_views(method: Method, views: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let (b, d) = check_views(method, views)?;
    if method == Method::Barlow {
        return Ok(concatenate(Axis(0), views).expect("equal widths"));
    }
    let v = views.len();
    let mut out = Array2::zeros((b * v, d));
    for (k, view) in views.iter().enumerate() {
        out.slice_mut(s![k..;v, ..]).assign(view);
    }
    Ok(out)
}

struct Evaluated {
    value: f64,
    grad: Array2<f64>,
    terms: BTreeMap<String, f64>,
}

fn instance_relation() -> RelationMatrix {
    RelationMatrix::from_entries(3, [(0, 1, 1.0), (1, 0, 1.0)]).expect("valid")
}

fn evaluate(method: Method, settings: &LossSettings, z: &Array2<f64>, sources: usize) -> Result<Evaluated> {
    let named = |terms: &[(&'static str, f64)]| terms.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    match method {
        Method::SimClr => {
            let out = simclr_loss(z.view(), &build_pair_relation(sources), &settings.simclr)?;
            Ok(Evaluated {
                value: out.loss.value,
                terms: named(&out.loss.terms),
                grad: out.loss.grad,
            })
        }
        Method::VicReg => {
            let out = vicreg_loss(z.view(), &build_pair_relation(sources), &settings.vicreg)?;
            Ok(Evaluated {
                value: out.value,
                terms: named(&out.terms),
                grad: out.grad,
            })
        }
        Method::Barlow => {
            let (left, right) = z.view().split_at(Axis(0), sources);
            let out = barlow_loss(left, right, &settings.barlow)?;
            let right_grad = out.grad_right.as_ref().expect("barlow returns both grads");
            Ok(Evaluated {
                value: out.value,
                terms: named(&out.terms),
                grad: concatenate(Axis(0), &[out.grad.view(), right_grad.view()]).expect("equal widths"),
            })
        }
        Method::InstanceSimClr => {
            // Mean of independent per-triple losses.
            let g = instance_relation();
            let mut grad = Array2::zeros(z.dim());
            let mut value = 0.0;
            let scale = 1.0 / sources as f64;
            for k in 0..sources {
                let rows = s![3 * k..3 * k + 3, ..];
                let out = simclr_loss(z.slice(rows), &g, &settings.simclr)?;
                value += out.loss.value * scale;
                grad.slice_mut(rows).assign(&(out.loss.grad * scale));
            }
            Ok(Evaluated {
                value,
                terms: BTreeMap::from([("L_nce".to_string(), value)]),
                grad,
            })
        }
    }
}

/// Loss of `network` on the views without changing anything.
pub fn evaluate_loss(network: &Network, method: Method, settings: &LossSettings, views: &[ArrayView2<f64>]) -> Result<f64> {
    let x = stack_views(method, views)?;
    let z = network.infer(x.view())?.z;
    Ok(evaluate(method, settings, &z, views[0].nrows())?.value)
}

/// One SSL step: forward all views, evaluate the loss, backpropagate, update.
/// `views[v]` holds one row per source sample, index-aligned across views.
pub fn train_step(state: &mut TrainState, views: &[ArrayView2<f64>]) -> Result<StepMetrics> {
    let x = stack_views(state.method, views)?;
    let sources = views[0].nrows();
    let step = state.step;
    let fwd = state.network.forward(x.view())?;
    if fwd.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NanLoss { step });
    }
    let embedding_std = embedding_std(&fwd.z);
    // Finite embeddings whose variance overflows have diverged as surely as a NaN loss.
    if !embedding_std.is_finite() {
        return Err(Error::NanLoss { step });
    }
    let eval = evaluate(state.method, &state.loss, &fwd.z, sources)?;
    if !eval.value.is_finite() || eval.grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NanLoss { step });
    }
    backward_and_step(&mut state.network, &eval.grad, &mut state.optimizer)?;
    state.step += 1;
    Ok(StepMetrics {
        step,
        loss: eval.value,
        terms: eval.terms,
        embedding_std,
        collapsed: embedding_std < COLLAPSE_THRESHOLD,
    })
}
