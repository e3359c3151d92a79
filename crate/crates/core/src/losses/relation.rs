use ndarray::Array2;

use crate::error::{Error, Result};

/// Sparse symmetric positive-pair structure over `n` batch rows.
///
/// Stored as compressed rows with ascending column indices. Both `(i, j)` and
/// `(j, i)` are stored explicitly; the diagonal is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl RelationMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds from ordered `(row, col, weight)` entries. Zero weights are dropped.
    /// Rejects asymmetric input, diagonal entries, negative or non-finite weights
    /// and duplicates.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut e: Vec<(usize, usize, f64)> = entries.into_iter().filter(|t| t.2 != 0.0).collect();
        for &(i, j, w) in &e {
            if i >= n || j >= n {
                return Err(Error::InvalidRelation(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            if i == j {
                return Err(Error::InvalidRelation(format!("diagonal entry ({i}, {i})")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidRelation(format!("weight {w} at ({i}, {j})")));
            }
        }
        e.sort_by_key(|a| (a.0, a.1));
        if e.windows(2).any(|p| p[0].0 == p[1].0 && p[0].1 == p[1].1) {
            return Err(Error::InvalidRelation("duplicate entry".into()));
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &e {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let m = Self {
            n,
            row_ptr,
            cols: e.iter().map(|t| t.1).collect(),
            weights: e.iter().map(|t| t.2).collect(),
        };
        for (i, j, w) in m.entries() {
            if m.get(j, i) != w {
                return Err(Error::InvalidRelation(format!("asymmetric at ({i}, {j})")));
            }
        }
        Ok(m)
    }

    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        let (r, c) = dense.dim();
        if r != c {
            return Err(Error::InvalidRelation(format!("{r}x{c} is not square")));
        }
        if let Some(d) = (0..r).find(|&i| dense[[i, i]] != 0.0) {
            return Err(Error::InvalidRelation(format!("diagonal entry ({d}, {d})")));
        }
        Self::from_entries(
            r,
            dense
                .indexed_iter()
                .filter(|(_, &w)| w != 0.0)
                .map(|((i, j), &w)| (i, j, w)),
        )
    }

    /// Rows `[v·k, v·k + v)` hold the `v` views of source `k`; all of them are
    /// mutually related with weight 1.
    pub fn grouped(n_sources: usize, views_per_source: usize) -> Self {
        let v = views_per_source;
        let entries = (0..n_sources).flat_map(move |k| {
            (0..v).flat_map(move |a| {
                (0..v)
                    .filter(move |&b| b != a)
                    .map(move |b| (k * v + a, k * v + b, 1.0))
            })
        });
        Self::from_entries(n_sources * v, entries).expect("grouped relation is valid")
    }

    /// Places `blocks` along the diagonal.
    pub fn block_diagonal(blocks: &[RelationMatrix]) -> Self {
        let mut offset = 0;
        let mut entries = Vec::new();
        for b in blocks {
            entries.extend(b.entries().map(|(i, j, w)| (i + offset, j + offset, w)));
            offset += b.size();
        }
        Self::from_entries(offset, entries).expect("blocks are valid")
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.weights[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// All stored `(i, j, w)` entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.weights[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for (i, j, w) in self.entries() {
            d[[i, j]] = w;
        }
        d
    }
}

/// Pairs consecutive rows: `(2k, 2k+1)` for each source `k`.
pub fn build_pair_relation(n_sources: usize) -> RelationMatrix {
    RelationMatrix::grouped(n_sources, 2)
}

/// Emits every ordered related pair once: row `i` ascending, then its related
/// columns `j` ascending, giving `(samples[i], samples[j])`.
pub fn split_left_right<T: Clone>(samples: &[T], relation: &RelationMatrix) -> Result<(Vec<T>, Vec<T>)> {
    if samples.len() != relation.size() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for a {}-row relation",
            samples.len(),
            relation.size()
        )));
    }
    if relation.nnz() == 0 {
        return Err(Error::EmptyRelation);
    }
    let (left, right) = relation
        .entries()
        .map(|(i, j, _)| (samples[i].clone(), samples[j].clone()))
        .unzip();
    Ok((left, right))
}
