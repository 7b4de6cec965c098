//! Compressed sparse row storage for the propagation operators.

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Builds from raw CSR arrays. Column indices within a row must be strictly increasing.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != n_rows + 1 || indices.len() != values.len() {
            return Err(Error::InvalidArgument("malformed CSR arrays".into()));
        }
        if indptr[n_rows] != indices.len() {
            return Err(Error::InvalidArgument("CSR indptr does not cover indices".into()));
        }
        for r in 0..n_rows {
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= n_cols) {
                return Err(Error::InvalidArgument(format!("CSR row {r} has bad column indices")));
            }
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
            symmetric: false,
        })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidArgument(format!("triplet ({r}, {c}) out of bounds")));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix::from_parts(n_rows, n_cols, indptr, indices, values)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
            symmetric: n_rows == n_cols,
        }
    }

    /// Marks the matrix as symmetric after verifying it entrywise.
    pub fn into_symmetric(mut self) -> Result<Self> {
        if !self.is_structurally_symmetric() {
            return Err(Error::InvalidArgument("matrix is not symmetric".into()));
        }
        self.symmetric = true;
        Ok(self)
    }

    fn is_structurally_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row_entries(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.n_rows, self.n_cols]);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    /// `A · X` for a dense row-major `X`. Accumulation order follows storage order.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.n_cols {
            return Err(Error::ShapeMismatch {
                op: "sparse-apply",
                left: vec![self.n_rows, self.n_cols],
                right: x.shape().to_vec(),
            });
        }
        let d = x.cols();
        let mut out = Tensor::zeros(&[self.n_rows, d]);
        for r in 0..self.n_rows {
            let out_row = out.row_mut(r);
            for (c, v) in self.row_entries(r) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `Aᵀ · X`. Uses `apply` directly when the matrix is known to be symmetric.
    pub fn apply_transpose(&self, x: &Tensor) -> Result<Tensor> {
        if self.symmetric {
            return self.apply(x);
        }
        if x.rows() != self.n_rows {
            return Err(Error::ShapeMismatch {
                op: "sparse-apply-transpose",
                left: vec![self.n_rows, self.n_cols],
                right: x.shape().to_vec(),
            });
        }
        let d = x.cols();
        let mut out = Tensor::zeros(&[self.n_cols, d]);
        for r in 0..self.n_rows {
            for (c, v) in self.row_entries(r) {
                let src = x.row(r);
                for (o, &xv) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }
}
