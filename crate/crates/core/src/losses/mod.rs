//! Joint-embedding SSL losses with exact analytic gradients.
//!
//! All three losses operate on an embedding batch `Z` (`N × K`, one row per
//! view) in double precision. VICReg and SimCLR read positive pairs from a
//! [`RelationMatrix`]; Barlow Twins takes explicitly paired left/right batches
//! (see [`split_left_right`]).

mod barlow;
mod instance;
mod relation;
mod simclr;
mod vicreg;

pub use barlow::{barlow_loss, BarlowParams};
pub use instance::{build_instance_batch, InstanceBatch, DEFAULT_NOISE_STD, DEFAULT_PATCH_SCALE};
pub use relation::{build_pair_relation, split_left_right, RelationMatrix};
pub use simclr::{simclr_loss, Reduction, SimClrOutput, SimClrParams};
pub use vicreg::{vicreg_loss, VicRegCoeffs};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Loss value, its gradient with respect to the input batch, and a named breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `dL/dZ` (for Barlow Twins, `dL/dZ_left`).
    pub grad: Array2<f64>,
    /// `dL/dZ_right` for losses over paired batches.
    pub grad_right: Option<Array2<f64>>,
    pub terms: Vec<(&'static str, f64)>,
}

impl LossOutput {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// `u·v / (‖u‖ ‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateEmbedding("zero vector in cosine similarity".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn check_batch(z: &ArrayView2<f64>) -> Result<()> {
    if z.nrows() < 2 {
        return Err(Error::InsufficientBatch(z.nrows()));
    }
    if z.ncols() == 0 {
        return Err(Error::ShapeMismatch("embedding has zero columns".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("embedding contains non-finite values".into()));
    }
    Ok(())
}

fn check_relation(z: &ArrayView2<f64>, g: &RelationMatrix) -> Result<()> {
    if g.size() != z.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "relation over {} rows for a batch of {}",
            g.size(),
            z.nrows()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            cosine_similarity(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(),
            -1.0
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err().name(),
            "DegenerateEmbedding"
        );
    }
}
