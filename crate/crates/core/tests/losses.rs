#[path = "support/oracle.rs"]
mod oracle;

use ndarray::Array2;
use oracle::{fd_grad, flatten, rel_err, rel_scalar, Mat, SplitMix};
use viewforge_core::losses::{
    barlow_loss, build_pair_relation, simclr_loss, vicreg_loss, BarlowParams, Reduction, RelationMatrix,
    SimClrParams, VicRegCoeffs,
};

const FD_STEP: f64 = 1e-5;

fn to_array(m: &Mat) -> Array2<f64> {
    Array2::from_shape_fn((m.len(), m[0].len()), |(i, j)| m[i][j])
}

fn to_relation(g: &Mat) -> RelationMatrix {
    RelationMatrix::from_dense(&to_array(g)).unwrap()
}

fn grad_vec(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn instance(rng: &mut SplitMix, idx: usize) -> (Mat, Mat) {
    let n = 2 + rng.below(15);
    let k = 1 + rng.below(12);
    let spread = [0.5, 1.0, 3.0, 10.0][idx % 4];
    let z = rng.matrix(n, k, -spread, spread);
    let g = if idx % 2 == 0 && n % 2 == 0 {
        oracle::pair_relation(n / 2)
    } else {
        oracle::random_relation(rng, n, 0.3)
    };
    (z, g)
}

#[test]
fn vicreg_matches_oracle_on_random_instances() {
    let mut rng = SplitMix(11);
    for idx in 0..100 {
        let (z, g) = instance(&mut rng, idx);
        let c = VicRegCoeffs {
            alpha: rng.range(0.0, 30.0),
            beta: rng.range(0.0, 5.0),
            gamma: rng.range(0.0, 30.0),
            epsilon: 1e-4,
        };
        let out = vicreg_loss(to_array(&z).view(), &to_relation(&g), &c).unwrap();
        let (v, cv, inv) = oracle::vicreg(&z, &g, c.alpha, c.beta, c.gamma, c.epsilon);
        assert!(rel_scalar(out.term("L_var").unwrap(), v) <= 1e-12, "instance {idx}");
        assert!(rel_scalar(out.term("L_cov").unwrap(), cv) <= 1e-12, "instance {idx}");
        assert!(rel_scalar(out.term("L_inv").unwrap(), inv) <= 1e-12, "instance {idx}");
        assert!(rel_scalar(out.value, v + cv + inv) <= 1e-12, "instance {idx}");
    }
}

#[test]
fn simclr_matches_oracle_on_random_instances() {
    let mut rng = SplitMix(12);
    for idx in 0..100 {
        let (z, g) = instance(&mut rng, idx);
        let n = z.len();
        if n < 3 && g[0][1] == 0.0 {
            continue;
        }
        let tau = rng.range(0.05, 2.0);
        let mean = idx % 3 == 0 && g.iter().flatten().any(|&w| w > 0.0);
        let reduction = if mean { Reduction::MeanOverPositives } else { Reduction::Sum };
        let out = simclr_loss(to_array(&z).view(), &to_relation(&g), &SimClrParams { tau, reduction }).unwrap();
        let (value, ghat) = oracle::simclr(&z, &g, tau, mean);
        assert!(rel_scalar(out.loss.value, value) <= 1e-12, "instance {idx}");
        for i in 0..n {
            for j in 0..n {
                assert!((out.estimated_relation[[i, j]] - ghat[i][j]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn simclr_gradient_matches_hand_derived_oracle() {
    let mut rng = SplitMix(14);
    for idx in 0..100 {
        let n = [4, 8, 16][idx % 3];
        let k = [3, 4, 8][idx % 3];
        let z = rng.matrix(n, k, -1.0, 1.0);
        let g = oracle::pair_relation(n / 2);
        let tau = if idx % 2 == 0 { 0.15 } else { rng.range(0.05, 1.0) };
        let mean = idx % 4 == 1;
        let reduction = if mean { Reduction::MeanOverPositives } else { Reduction::Sum };
        let out = simclr_loss(to_array(&z).view(), &to_relation(&g), &SimClrParams { tau, reduction }).unwrap();
        let want = oracle::simclr_grad(&z, &g, tau, mean);
        let err = rel_err(&grad_vec(&out.loss.grad), &flatten(&want));
        assert!(err <= 1e-10, "instance {idx}: {err}");
    }
}

#[test]
fn barlow_matches_oracle_on_random_instances() {
    let mut rng = SplitMix(13);
    for idx in 0..100 {
        let n = 3 + rng.below(14);
        let k = 1 + rng.below(10);
        let left = rng.matrix(n, k, -2.0, 2.0);
        let right = rng.matrix(n, k, -1.0, 3.0);
        let alpha = rng.range(0.0, 1.0);
        let out = barlow_loss(to_array(&left).view(), to_array(&right).view(), &BarlowParams { alpha }).unwrap();
        let want = oracle::barlow(&left, &right, alpha);
        assert!(rel_scalar(out.value, want) <= 1e-12, "instance {idx}: {} vs {want}", out.value);
    }
}

#[test]
fn vicreg_gradient_matches_finite_differences() {
    let mut rng = SplitMix(21);
    for idx in 0..30 {
        let (z, g) = instance(&mut rng, idx);
        let c = VicRegCoeffs::default();
        let gr = to_relation(&g);
        let out = vicreg_loss(to_array(&z).view(), &gr, &c).unwrap();
        // Skip instances whose std sits on the hinge, where the loss is not differentiable.
        let cov = oracle::covariance(&z);
        if cov.iter().enumerate().any(|(d, r)| ((r[d] + c.epsilon).sqrt() - 1.0).abs() < 1e-3) {
            continue;
        }
        let fd = fd_grad(&z, FD_STEP, |m| {
            let (a, b, d) = oracle::vicreg(m, &g, c.alpha, c.beta, c.gamma, c.epsilon);
            a + b + d
        });
        let err = rel_err(&grad_vec(&out.grad), &flatten(&fd));
        assert!(err < 1e-5, "instance {idx}: {err}");
    }
}

#[test]
fn simclr_gradient_matches_finite_differences() {
    let mut rng = SplitMix(22);
    for idx in 0..30 {
        let (z, g) = instance(&mut rng, idx);
        let tau = rng.range(0.1, 1.0);
        for (reduction, mean) in [(Reduction::Sum, false), (Reduction::MeanOverPositives, true)] {
            if mean && !g.iter().flatten().any(|&w| w > 0.0) {
                continue;
            }
            let out = simclr_loss(to_array(&z).view(), &to_relation(&g), &SimClrParams { tau, reduction }).unwrap();
            let fd = fd_grad(&z, FD_STEP, |m| oracle::simclr(m, &g, tau, mean).0);
            let err = rel_err(&grad_vec(&out.loss.grad), &flatten(&fd));
            assert!(err < 1e-5, "instance {idx}: {err}");
        }
    }
}

#[test]
fn barlow_gradients_match_finite_differences() {
    let mut rng = SplitMix(23);
    for idx in 0..30 {
        let n = 3 + rng.below(10);
        let k = 1 + rng.below(8);
        let left = rng.matrix(n, k, -2.0, 2.0);
        let right = rng.matrix(n, k, -2.0, 2.0);
        let alpha = rng.range(0.0, 1.0);
        let out = barlow_loss(to_array(&left).view(), to_array(&right).view(), &BarlowParams { alpha }).unwrap();
        let fd_left = fd_grad(&left, FD_STEP, |m| oracle::barlow(m, &right, alpha));
        let fd_right = fd_grad(&right, FD_STEP, |m| oracle::barlow(&left, m, alpha));
        assert!(rel_err(&grad_vec(&out.grad), &flatten(&fd_left)) < 1e-5, "instance {idx}");
        let gr = out.grad_right.unwrap();
        assert!(rel_err(&grad_vec(&gr), &flatten(&fd_right)) < 1e-5, "instance {idx}");
    }
}

#[test]
fn pair_relation_equals_oracle_layout() {
    for n in 1..6 {
        let g = build_pair_relation(n).to_dense();
        assert_eq!(g, to_array(&oracle::pair_relation(n)));
    }
}
