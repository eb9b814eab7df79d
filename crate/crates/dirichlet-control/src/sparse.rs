//! Compressed sparse row matrices and submatrix extraction.

use std::io::Write;

use crate::{Error, Result};

/// Row or column selector for submatrix extraction.
#[derive(Debug, Clone, Copy)]
pub enum Select<'a> {
    /// Keep every index in natural order.
    All,
    /// Keep exactly these indices, in the order given.
    Of(&'a [usize]),
}

impl<'a> Select<'a> {
    fn indices(&self, n: usize) -> Vec<usize> {
        match self {
            Select::All => (0..n).collect(),
            Select::Of(idx) => idx.to_vec(),
        }
    }
}

/// Sparse matrix in compressed sparse row form with strictly increasing
/// column indices within each row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    /// Number of rows.
    pub nrows: usize,
    /// Number of columns.
    pub ncols: usize,
    /// Row offsets into `col_idx`/`values`, length `nrows + 1`.
    pub row_ptr: Vec<usize>,
    /// Column indices, ascending within each row.
    pub col_idx: Vec<usize>,
    /// Nonzero values, parallel to `col_idx`.
    pub values: Vec<f64>,
    /// Whether the matrix is numerically symmetric; set by constructors
    /// that guarantee it and required by the Cholesky factorization.
    pub symmetric: bool,
}

impl CsrMatrix {
    /// Builds a matrix from (row, column, value) triplets, summing
    /// duplicates. Triplets with equal position are accumulated in their
    /// input order, so the result is deterministic.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::IndexOutOfRange(format!(
                    "triplet ({i}, {j}) outside a {nrows} x {ncols} matrix"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1, k));
        let mut entry_rows: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        for &k in &order {
            let (i, j, v) = triplets[k];
            if entry_rows.last() == Some(&i) && col_idx.last() == Some(&j) {
                *values.last_mut().unwrap() += v;
            } else {
                entry_rows.push(i);
                col_idx.push(j);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for &i in &entry_rows {
            row_ptr[i + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        })
    }

    /// Number of stored nonzeros.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (i, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            *out = acc;
        }
        y
    }

    /// Transposed matrix-vector product `self^T * x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Explicit transpose.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts.clone();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let slot = next[j];
                col_idx[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
            symmetric: self.symmetric,
        }
    }

    /// Largest absolute asymmetry `max |a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut max = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                max = max.max((v - t.get(i, j)).abs());
            }
        }
        max
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Row-sum norm, the operator infinity norm.
    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Iterates over stored entries as (row, column, value).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .map(move |(&j, &v)| (i, j, v))
                .collect::<Vec<_>>()
        })
    }

    /// Extracts the submatrix of the selected rows and columns, in the
    /// induced orderings of the selectors.
    pub fn extract(&self, rows: Select, cols: Select) -> Result<CsrMatrix> {
        let row_idx = rows.indices(self.nrows);
        let col_idx_sel = cols.indices(self.ncols);
        for &i in &row_idx {
            if i >= self.nrows {
                return Err(Error::IndexOutOfRange(format!(
                    "row {i} outside a matrix with {} rows",
                    self.nrows
                )));
            }
        }
        for &j in &col_idx_sel {
            if j >= self.ncols {
                return Err(Error::IndexOutOfRange(format!(
                    "column {j} outside a matrix with {} columns",
                    self.ncols
                )));
            }
        }
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in col_idx_sel.iter().enumerate() {
            col_map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(row_idx.len() + 1);
        row_ptr.push(0usize);
        let mut out_cols = Vec::new();
        let mut out_vals = Vec::new();
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for &i in &row_idx {
            scratch.clear();
            let (cols_i, vals_i) = self.row(i);
            for (&j, &v) in cols_i.iter().zip(vals_i) {
                if col_map[j] != usize::MAX {
                    scratch.push((col_map[j], v));
                }
            }
            scratch.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in &scratch {
                out_cols.push(j);
                out_vals.push(v);
            }
            row_ptr.push(out_cols.len());
        }
        let same_selection = match (rows, cols) {
            (Select::All, Select::All) => true,
            (Select::Of(r), Select::Of(c)) => r == c,
            _ => false,
        };
        Ok(CsrMatrix {
            nrows: row_idx.len(),
            ncols: col_idx_sel.len(),
            row_ptr,
            col_idx: out_cols,
            values: out_vals,
            symmetric: self.symmetric && same_selection,
        })
    }

    /// Writes the matrix as zero-based `i j value` triplet lines.
    pub fn export<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(out, "{i} {j} {v:.16e}")?;
            }
        }
        Ok(())
    }
}
