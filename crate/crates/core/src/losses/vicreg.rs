use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_batch, check_relation, LossOutput, RelationMatrix};
use crate::error::{Error, Result};

/// Weights of the variance (`alpha`), covariance (`beta`) and invariance
/// (`gamma`) terms, plus the variance regularizer `epsilon` under the root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VicRegCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for VicRegCoeffs {
    fn default() -> Self {
        Self {
            alpha: 25.0,
            beta: 1.0,
            gamma: 25.0,
            epsilon: 1e-4,
        }
    }
}

impl VicRegCoeffs {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.alpha) && ok(self.beta) && ok(self.gamma)) {
            return Err(Error::InvalidParam("VICReg weights must be finite and >= 0".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParam("VICReg epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// ```text
/// L_var = α Σ_k relu(1 − sqrt(C_kk + ε))
/// L_cov = β Σ_{j≠k} C_kj²
/// L_inv = (γ/N) Σ_ij G_ij ‖Z_i − Z_j‖²
/// ```
/// with `C` the unbiased (`1/(N−1)`) covariance of the rows of `Z`.
pub fn vicreg_loss(z: ArrayView2<f64>, g: &RelationMatrix, coeffs: &VicRegCoeffs) -> Result<LossOutput> {
    check_batch(&z)?;
    check_relation(&z, g)?;
    coeffs.validate()?;
    let (n, k) = z.dim();
    let nf = n as f64;

    let mean = z.mean_axis(Axis(0)).expect("n >= 2");
    let zc = &z - &mean;
    let cov = zc.t().dot(&zc) / (nf - 1.0);

    // dL/dC, symmetric.
    let mut dcov = Array2::<f64>::zeros((k, k));
    let mut l_var = 0.0;
    for d in 0..k {
        let s = (cov[[d, d]] + coeffs.epsilon).sqrt();
        let gap = 1.0 - s;
        if gap > 0.0 {
            l_var += gap;
            dcov[[d, d]] = -coeffs.alpha / (2.0 * s);
        }
    }
    l_var *= coeffs.alpha;

    let mut l_cov = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                let c = cov[[a, b]];
                l_cov += c * c;
                dcov[[a, b]] = 2.0 * coeffs.beta * c;
            }
        }
    }
    l_cov *= coeffs.beta;

    // Column sums of zc are zero, so the centering Jacobian is the identity here.
    let mut grad = zc.dot(&dcov) * (2.0 / (nf - 1.0));

    let mut l_inv = 0.0;
    let scale = coeffs.gamma / nf;
    for (i, j, w) in g.entries() {
        let diff = &z.row(i) - &z.row(j);
        l_inv += w * diff.dot(&diff);
        let step = diff * (2.0 * scale * w);
        {
            let mut gi = grad.row_mut(i);
            gi += &step;
        }
        let mut gj = grad.row_mut(j);
        gj -= &step;
    }
    l_inv *= scale;

    Ok(LossOutput {
        value: l_var + l_cov + l_inv,
        grad,
        grad_right: None,
        terms: vec![("L_var", l_var), ("L_cov", l_cov), ("L_inv", l_inv)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::build_pair_relation;
    use ndarray::Array2;

    #[test]
    fn identical_rows_hit_the_variance_floor() {
        let z = Array2::from_shape_fn((6, 5), |(_, j)| j as f64 * 0.3 - 0.7);
        let c = VicRegCoeffs {
            alpha: 2.0,
            beta: 1.0,
            gamma: 3.0,
            epsilon: 1e-8,
        };
        let out = vicreg_loss(z.view(), &build_pair_relation(3), &c).unwrap();
        let ak = c.alpha * 5.0;
        assert!((out.value - ak).abs() <= ak * c.epsilon.sqrt());
        assert_eq!(out.term("L_cov"), Some(0.0));
        assert_eq!(out.term("L_inv"), Some(0.0));
    }

    #[test]
    fn unit_variance_uncorrelated_columns_zero_var_and_inv() {
        // Columns ±1 patterns, orthogonal and zero-mean: covariance = (N/(N−1))·I.
        // Scale so the unbiased variance is exactly one.
        let n = 4.0f64;
        let s = ((n - 1.0) / n).sqrt();
        let z = ndarray::array![[s, s], [s, -s], [-s, s], [-s, -s]];
        let c = VicRegCoeffs {
            epsilon: 1e-12,
            ..VicRegCoeffs::default()
        };
        let out = vicreg_loss(z.view(), &RelationMatrix::zeros(4), &c).unwrap();
        assert_eq!(out.term("L_inv"), Some(0.0));
        assert!(out.term("L_var").unwrap() < 1e-9);
        assert!(out.term("L_cov").unwrap() < 1e-20);
    }

    #[test]
    fn rejects_single_row_and_bad_epsilon() {
        let z = Array2::<f64>::zeros((1, 3));
        assert!(matches!(
            vicreg_loss(z.view(), &RelationMatrix::zeros(1), &VicRegCoeffs::default()),
            Err(Error::InsufficientBatch(1))
        ));
        let z = Array2::<f64>::zeros((2, 3));
        let c = VicRegCoeffs {
            epsilon: 0.0,
            ..VicRegCoeffs::default()
        };
        assert!(vicreg_loss(z.view(), &build_pair_relation(1), &c).is_err());
    }

    #[test]
    fn value_is_sum_of_terms() {
        let z = Array2::from_shape_fn((8, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.21 - 0.4);
        let out = vicreg_loss(z.view(), &build_pair_relation(4), &VicRegCoeffs::default()).unwrap();
        let sum: f64 = out.terms.iter().map(|t| t.1).sum();
        assert_eq!(out.value, sum);
    }
}
