use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Gradients, LayerGrad, Layers, Network};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Decoupled decay applied to weights, not biases.
    pub weight_decay: f64,
    /// Rescales the whole gradient to at most this L2 norm before the momentum update.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

/// SGD with heavy-ball momentum and decoupled weight decay:
/// `v ← μv + g`, `w ← w − lr·(v + λw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    buffers: Vec<LayerGrad>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            buffers: Vec::new(),
        }
    }

    pub fn step<L: Layers>(&mut self, model: &mut L, grads: &Gradients) -> Result<()> {
        let mut layers = model.layers_mut();
        if layers.len() != grads.layers.len()
            || layers
                .iter()
                .zip(&grads.layers)
                .any(|(l, g)| l.weight.dim() != g.weight.dim() || l.bias.len() != g.bias.len())
        {
            return Err(Error::ShapeMismatch("gradients do not match the model's layers".into()));
        }
        if self.buffers.is_empty() {
            self.buffers = grads
                .layers
                .iter()
                .map(|g| LayerGrad {
                    weight: Array2::zeros(g.weight.dim()),
                    bias: ndarray::Array1::zeros(g.bias.len()),
                })
                .collect();
        } else if self.buffers.len() != layers.len()
            || self.buffers.iter().zip(&grads.layers).any(|(b, g)| b.weight.dim() != g.weight.dim())
        {
            return Err(Error::ShapeMismatch("momentum buffers do not match the gradients".into()));
        }
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
            max_grad_norm,
        } = self.config;
        let scale = match max_grad_norm {
            Some(max) if !(max > 0.0) => {
                return Err(Error::InvalidParam(format!("max_grad_norm {max} must be > 0")));
            }
            Some(max) => {
                let norm = grads
                    .layers
                    .iter()
                    .map(|g| g.weight.iter().chain(&g.bias).map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for ((layer, g), buf) in layers.iter_mut().zip(&grads.layers).zip(&mut self.buffers) {
            buf.weight.zip_mut_with(&g.weight, |v, &gv| *v = momentum * *v + scale * gv);
            buf.bias.zip_mut_with(&g.bias, |v, &gv| *v = momentum * *v + scale * gv);
            layer
                .weight
                .zip_mut_with(&buf.weight, |w, &v| *w -= lr * (v + weight_decay * *w));
            layer.bias.zip_mut_with(&buf.bias, |b, &v| *b -= lr * v);
        }
        Ok(())
    }
}

/// Backpropagates `dL/dz` through the recorded tape and applies one optimizer step.
pub fn backward_and_step(net: &mut Network, dz: &Array2<f64>, opt: &mut Sgd) -> Result<Gradients> {
    let grads = net.backward(dz)?;
    opt.step(net, &grads)?;
    Ok(grads)
}
