use serde::{Deserialize, Serialize};

use super::{DiffError, Matrix};

/// Sparse f64 matrix in compressed sparse row form.
///
/// `offsets` has `rows + 1` entries; row `i` owns the half-open slice
/// `offsets[i]..offsets[i+1]` of `indices`/`values`, with column indices
/// strictly increasing inside a row. Iteration order is therefore fixed,
/// which keeps sparse products bit-reproducible across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, DiffError> {
        if offsets.len() != rows + 1 || offsets[0] != 0 || *offsets.last().unwrap() != indices.len()
        {
            return Err(DiffError::BadShape {
                op: "csr",
                detail: format!(
                    "offset table has {} entries for {rows} rows ({} indices)",
                    offsets.len(),
                    indices.len()
                ),
            });
        }
        if indices.len() != values.len() {
            return Err(DiffError::BadShape {
                op: "csr",
                detail: format!("{} indices but {} values", indices.len(), values.len()),
            });
        }
        for i in 0..rows {
            if offsets[i] > offsets[i + 1] {
                return Err(DiffError::BadShape {
                    op: "csr",
                    detail: format!("row {i} has a decreasing offset"),
                });
            }
            let row = &indices[offsets[i]..offsets[i + 1]];
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(DiffError::BadShape {
                        op: "csr",
                        detail: format!("row {i} columns are not strictly increasing"),
                    });
                }
            }
            if let Some(&last) = row.last() {
                if last as usize >= cols {
                    return Err(DiffError::BadShape {
                        op: "csr",
                        detail: format!("row {i} references column {last} of {cols}"),
                    });
                }
            }
        }
        Ok(CsrMatrix { rows, cols, offsets, indices, values })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<Self, DiffError> {
        for &(r, c, _) in &triplets {
            if r as usize >= rows || c as usize >= cols {
                return Err(DiffError::BadShape {
                    op: "csr",
                    detail: format!("triplet ({r}, {c}) outside {rows}x{cols}"),
                });
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        // During this loop offsets[r + 1] holds the entry count of row r;
        // the suffix sum below turns counts into real offsets.
        for (r, c, v) in triplets {
            let row = r as usize;
            if offsets[row + 1] > 0 && indices.last() == Some(&c) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            offsets[row + 1] += 1;
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        CsrMatrix::new(rows, cols, offsets, indices, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: &Matrix) -> Result<Matrix, DiffError> {
        if self.cols != dense.rows() {
            return Err(DiffError::DimMismatch {
                op: "spmm",
                lhs: self.shape(),
                rhs: dense.shape(),
            });
        }
        let n = dense.cols();
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let d_row = dense.row(c as usize);
                for (o, &d) in out_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`, without materializing the transpose.
    pub fn tr_mul_dense(&self, dense: &Matrix) -> Result<Matrix, DiffError> {
        if self.rows != dense.rows() {
            return Err(DiffError::DimMismatch {
                op: "spmm_t",
                lhs: self.shape(),
                rhs: dense.shape(),
            });
        }
        let n = dense.cols();
        let mut out = Matrix::zeros(self.cols, n);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let d_row = dense.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let out_row = out.row_mut(c as usize);
                for (o, &d) in out_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        }
        Ok(out)
    }

    /// Sparsifies a dense matrix, keeping entries that are exactly nonzero.
    pub fn from_dense(dense: &Matrix) -> Self {
        let mut offsets = Vec::with_capacity(dense.rows() + 1);
        offsets.push(0usize);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        CsrMatrix { rows: dense.rows(), cols: dense.cols(), offsets, indices, values }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(i, c as usize, v);
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if self.get(c as usize, i) != v {
                    return false;
                }
            }
        }
        true
    }
}
