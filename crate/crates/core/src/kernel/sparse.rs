use crate::error::{Error, Result};
use crate::kernel::Matrix;

/// Square CSR operator used for message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::Kernel(format!(
                "sparse entry ({r}, {c}) outside {n}x{n}"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseMatrix {
            n,
            indptr,
            indices,
            values,
        })
    }

    /// `D^-1/2 (A + I) D^-1/2` over an undirected edge list.
    pub fn gcn_normalized(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut deg = vec![1.0f64; n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Kernel(format!("edge ({u}, {v}) outside {n} nodes")));
            }
            deg[u] += 1.0;
            deg[v] += 1.0;
        }
        let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut t = Vec::with_capacity(n + 2 * edges.len());
        for i in 0..n {
            t.push((i, i, inv[i] * inv[i]));
        }
        for &(u, v) in edges {
            let w = inv[u] * inv[v];
            t.push((u, v, w));
            t.push((v, u, w));
        }
        Self::from_triplets(n, t)
    }

    /// Row-normalised adjacency without self loops (mean over neighbours).
    /// Isolated nodes get an all-zero row.
    pub fn mean_aggregator(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut deg = vec![0usize; n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Kernel(format!("edge ({u}, {v}) outside {n} nodes")));
            }
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut t = Vec::with_capacity(2 * edges.len());
        for &(u, v) in edges {
            t.push((u, v, 1.0 / deg[u] as f64));
            t.push((v, u, 1.0 / deg[v] as f64));
        }
        Self::from_triplets(n, t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(Error::shape("spmm", (self.n, self.n), x.shape()));
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        for r in 0..self.n {
            let span = self.indptr[r]..self.indptr[r + 1];
            let out_row = out.row_mut(r);
            for (&c, &w) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                for (o, &v) in out_row.iter_mut().zip(x.row(c)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`, needed for the backward pass of non-symmetric operators.
    pub fn spmm_t(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(Error::shape("spmm_t", (self.n, self.n), x.shape()));
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        for r in 0..self.n {
            let span = self.indptr[r]..self.indptr[r + 1];
            for (&c, &w) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                for (o, &v) in out.row_mut(c).iter_mut().zip(x.row(r)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, w) in self.row_entries(r) {
                m.set(r, c, m.get(r, c) + w);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_edges_gives_identity() {
        let a = SparseMatrix::gcn_normalized(3, &[]).unwrap();
        assert_eq!(a.to_dense(), Matrix::identity(3));
    }

    #[test]
    fn transpose_product_matches_dense() {
        let a = SparseMatrix::mean_aggregator(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![-1.0, 0.5],
            vec![3.0, 0.0],
            vec![0.25, 4.0],
        ])
        .unwrap();
        let dense_t = a.to_dense().transpose();
        assert!(a.spmm_t(&x).unwrap().max_abs_diff(&dense_t.matmul(&x).unwrap()) < 1e-15);
        assert!(a.spmm(&x).unwrap().max_abs_diff(&a.to_dense().matmul(&x).unwrap()) < 1e-15);
    }
}
