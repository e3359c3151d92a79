use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_batch, check_relation, LossOutput, RelationMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// `−Σ_ij G_ij log Ĝ_ij`.
    Sum,
    /// The sum divided by `Σ_ij G_ij`.
    MeanOverPositives,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimClrParams {
    pub tau: f64,
    pub reduction: Reduction,
}

impl Default for SimClrParams {
    fn default() -> Self {
        Self {
            tau: 0.15,
            reduction: Reduction::Sum,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimClrOutput {
    pub loss: LossOutput,
    /// Row-wise softmax of cosine similarities over `j ≠ i`; zero diagonal.
    pub estimated_relation: Array2<f64>,
}

/// Contrastive loss comparing `G` against the estimated relation
/// `Ĝ_ij = exp(cos(z_i, z_j)/τ) / Σ_{j'≠i} exp(cos(z_i, z_j')/τ)`.
pub fn simclr_loss(z: ArrayView2<f64>, g: &RelationMatrix, params: &SimClrParams) -> Result<SimClrOutput> {
    check_batch(&z)?;
    check_relation(&z, g)?;
    if !(params.tau.is_finite() && params.tau > 0.0) {
        return Err(Error::InvalidParam(format!("temperature {} must be > 0", params.tau)));
    }
    let n = z.nrows();
    let tau = params.tau;

    let norms: Array1<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateEmbedding(format!("row {i} has zero norm")));
    }
    let mut u = z.to_owned();
    for (mut row, &nrm) in u.rows_mut().into_iter().zip(norms.iter()) {
        row /= nrm;
    }
    let logits = u.dot(&u.t()) / tau;

    // Log-softmax over j ≠ i with max subtraction.
    let mut lse = Array1::<f64>::zeros(n);
    let mut g_hat = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = logits.row(i);
        let m = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| (row[j] - m).exp()).sum();
        lse[i] = m + s.ln();
        for j in (0..n).filter(|&j| j != i) {
            g_hat[[i, j]] = (row[j] - lse[i]).exp();
        }
    }

    let scale = match params.reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanOverPositives => {
            let total = g.total();
            if total == 0.0 {
                return Err(Error::EmptyRelation);
            }
            1.0 / total
        }
    };

    let mut value = 0.0;
    for (i, j, w) in g.entries() {
        value -= w * (logits[[i, j]] - lse[i]);
    }
    value *= scale;

    // dL/dlogit_ij = r_i Ĝ_ij − G_ij for j ≠ i.
    let mut dlogits = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let r = g.row_sum(i);
        if r != 0.0 {
            for j in (0..n).filter(|&j| j != i) {
                dlogits[[i, j]] = r * g_hat[[i, j]];
            }
        }
        for (j, w) in g.row(i) {
            dlogits[[i, j]] -= w;
        }
    }
    dlogits *= scale / tau;
    let sym = &dlogits + &dlogits.t();
    let du = sym.dot(&u);

    // Through the row normalization: (I − u uᵀ) g / ‖z‖.
    let mut grad = du;
    for i in 0..n {
        let ui = u.row(i);
        let proj = grad.row(i).dot(&ui);
        let mut gi = grad.row_mut(i);
        gi.scaled_add(-proj, &ui);
        gi /= norms[i];
    }

    Ok(SimClrOutput {
        loss: LossOutput {
            value,
            grad,
            grad_right: None,
            terms: vec![("L_nce", value)],
        },
        estimated_relation: g_hat,
    })
}
