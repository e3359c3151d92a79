//! Naive scalar-loop reference implementations of the SSL losses plus a
//! central finite-difference helper. Deliberately shares no code with the
//! library: plain nested loops over `Vec<Vec<f64>>`, dense relation matrices.
#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

pub fn covariance(z: &Mat) -> Mat {
    let n = z.len();
    let k = z[0].len();
    let mut mean = vec![0.0; k];
    for row in z {
        for d in 0..k {
            mean[d] += row[d];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut c = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for row in z {
                s += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
            c[a][b] = s / (n as f64 - 1.0);
        }
    }
    c
}

/// Returns (L_var, L_cov, L_inv).
pub fn vicreg(z: &Mat, g: &Mat, alpha: f64, beta: f64, gamma: f64, eps: f64) -> (f64, f64, f64) {
    let n = z.len();
    let k = z[0].len();
    let c = covariance(z);
    let mut var = 0.0;
    for d in 0..k {
        let s = (c[d][d] + eps).sqrt();
        if 1.0 - s > 0.0 {
            var += 1.0 - s;
        }
    }
    let mut cov = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                cov += c[a][b] * c[a][b];
            }
        }
    }
    let mut inv = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut d2 = 0.0;
            for d in 0..k {
                d2 += (z[i][d] - z[j][d]) * (z[i][d] - z[j][d]);
            }
            inv += g[i][j] * d2;
        }
    }
    (alpha * var, beta * cov, gamma / n as f64 * inv)
}

pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    dot / (nu.sqrt() * nv.sqrt())
}

/// Returns (value, Ĝ). `mean` divides by the total positive weight.
pub fn simclr(z: &Mat, g: &Mat, tau: f64, mean: bool) -> (f64, Mat) {
    let n = z.len();
    let mut ghat = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (cos(&z[i], &z[j]) / tau).exp();
            }
        }
        for j in 0..n {
            if j != i {
                ghat[i][j] = (cos(&z[i], &z[j]) / tau).exp() / denom;
            }
        }
    }
    let mut value = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if g[i][j] != 0.0 {
                value -= g[i][j] * ghat[i][j].ln();
                total += g[i][j];
            }
        }
    }
    if mean {
        value /= total;
    }
    (value, ghat)
}

pub fn barlow(left: &Mat, right: &Mat, alpha: f64) -> f64 {
    let n = left.len();
    let k = left[0].len();
    let column = |m: &Mat, c: usize| -> Vec<f64> {
        let mu: f64 = (0..n).map(|i| m[i][c]).sum::<f64>() / n as f64;
        (0..n).map(|i| m[i][c] - mu).collect()
    };
    let mut value = 0.0;
    for a in 0..k {
        let la = column(left, a);
        for b in 0..k {
            let rb = column(right, b);
            let c = cos(&la, &rb);
            if a == b {
                value += (c - 1.0) * (c - 1.0);
            } else {
                value += alpha * c * c;
            }
        }
    }
    value
}

/// Central differences of `f` with respect to every entry of `z`.
pub fn fd_grad(z: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut grad = vec![vec![0.0; z[0].len()]; z.len()];
    let mut work = z.clone();
    for i in 0..z.len() {
        for d in 0..z[0].len() {
            let orig = work[i][d];
            work[i][d] = orig + h;
            let up = f(&work);
            work[i][d] = orig - h;
            let down = f(&work);
            work[i][d] = orig;
            grad[i][d] = (up - down) / (2.0 * h);
        }
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all entries.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

pub fn rel_scalar(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Small deterministic generator (splitmix64) so the oracle side needs no crates.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
        (0..rows).map(|_| (0..cols).map(|_| self.range(lo, hi)).collect()).collect()
    }
}

/// Dense block-pair relation: rows 2k and 2k+1 related.
pub fn pair_relation(n_sources: usize) -> Mat {
    let n = 2 * n_sources;
    let mut g = vec![vec![0.0; n]; n];
    for k in 0..n_sources {
        g[2 * k][2 * k + 1] = 1.0;
        g[2 * k + 1][2 * k] = 1.0;
    }
    g
}

/// Random sparse symmetric nonnegative matrix with zero diagonal.
pub fn random_relation(rng: &mut SplitMix, n: usize, density: f64) -> Mat {
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.uniform() < density {
                let w = rng.range(0.1, 2.0);
                g[i][j] = w;
                g[j][i] = w;
            }
        }
    }
    g
}

/// d cos(u, v) / du.
pub fn dcos_du(u: &[f64], v: &[f64]) -> Vec<f64> {
    let nu2: f64 = u.iter().map(|x| x * x).sum();
    let nv2: f64 = v.iter().map(|x| x * x).sum();
    let c = cos(u, v);
    (0..u.len())
        .map(|d| v[d] / (nu2.sqrt() * nv2.sqrt()) - c * u[d] / nu2)
        .collect()
}

/// Hand-derived SimCLR gradient, accumulated pair by pair through the chain
/// rule on every ordered cosine similarity.
pub fn simclr_grad(z: &Mat, g: &Mat, tau: f64, mean: bool) -> Mat {
    let n = z.len();
    let (_, ghat) = simclr(z, g, tau, mean);
    let mut total = 0.0;
    for row in g {
        for w in row {
            total += w;
        }
    }
    let scale = if mean { 1.0 / total } else { 1.0 };
    let mut grad = vec![vec![0.0; z[0].len()]; n];
    for i in 0..n {
        let r: f64 = g[i].iter().sum();
        for j in 0..n {
            if j == i {
                continue;
            }
            let dl_ds = scale * (r * ghat[i][j] - g[i][j]) / tau;
            let di = dcos_du(&z[i], &z[j]);
            let dj = dcos_du(&z[j], &z[i]);
            for d in 0..z[0].len() {
                grad[i][d] += dl_ds * di[d];
                grad[j][d] += dl_ds * dj[d];
            }
        }
    }
    grad
}
