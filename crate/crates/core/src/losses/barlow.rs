use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_batch, LossOutput};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarlowParams {
    /// Weight of the off-diagonal (redundancy) term.
    pub alpha: f64,
}

impl Default for BarlowParams {
    fn default() -> Self {
        Self { alpha: 0.0025 }
    }
}

/// Centers columns and scales them to unit norm. Returns the unit columns and
/// the centered norms.
fn unit_columns(z: &ArrayView2<f64>, side: &str) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = z.nrows();
    let mean = z.mean_axis(Axis(0)).expect("n >= 2");
    let mut c = z - &mean;
    let mut norms = Vec::with_capacity(z.ncols());
    for (k, mut col) in c.columns_mut().into_iter().enumerate() {
        let nrm = col.dot(&col).sqrt();
        let scale = z.column(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if nrm == 0.0 || nrm <= 4.0 * f64::EPSILON * (n as f64).sqrt() * scale {
            return Err(Error::DegenerateEmbedding(format!(
                "{side} column {k} has zero variance"
            )));
        }
        col /= nrm;
        norms.push(nrm);
    }
    Ok((c, norms))
}

/// Backpropagates `g = dL/dÂ` through column normalization and centering.
fn through_normalization(unit: &Array2<f64>, norms: &[f64], mut g: Array2<f64>) -> Array2<f64> {
    for (k, mut col) in g.columns_mut().into_iter().enumerate() {
        let a = unit.column(k);
        let proj = col.dot(&a);
        col.scaled_add(-proj, &a);
        col /= norms[k];
    }
    let mean = g.mean_axis(Axis(0)).expect("n >= 2");
    g - &mean
}

/// `Σ_k (C_kk − 1)² + α Σ_{k≠k'} C_kk'²` where `C` is the cosine similarity
/// between mean-centered columns of `Z_left` and `Z_right`.
pub fn barlow_loss(left: ArrayView2<f64>, right: ArrayView2<f64>, params: &BarlowParams) -> Result<LossOutput> {
    if left.dim() != right.dim() {
        return Err(Error::ShapeMismatch(format!(
            "left is {:?}, right is {:?}",
            left.dim(),
            right.dim()
        )));
    }
    check_batch(&left)?;
    check_batch(&right)?;
    if !(params.alpha.is_finite() && params.alpha >= 0.0) {
        return Err(Error::InvalidParam(format!("alpha {} must be >= 0", params.alpha)));
    }
    let k = left.ncols();
    let (a, na) = unit_columns(&left, "left")?;
    let (b, nb) = unit_columns(&right, "right")?;
    let c = a.t().dot(&b);

    let mut on_diag = 0.0;
    let mut off_diag = 0.0;
    let mut w = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let v = c[[i, j]];
            if i == j {
                on_diag += (v - 1.0) * (v - 1.0);
                w[[i, j]] = 2.0 * (v - 1.0);
            } else {
                off_diag += v * v;
                w[[i, j]] = 2.0 * params.alpha * v;
            }
        }
    }
    off_diag *= params.alpha;

    let grad_left = through_normalization(&a, &na, b.dot(&w.t()));
    let grad_right = through_normalization(&b, &nb, a.dot(&w));

    Ok(LossOutput {
        value: on_diag + off_diag,
        grad: grad_left,
        grad_right: Some(grad_right),
        terms: vec![("on_diag", on_diag), ("off_diag", off_diag)],
    })
}
