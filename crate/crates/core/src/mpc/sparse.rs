//! Minimal CSR matrix for the QP solver: matvec, transpose-matvec, and the
//! dense normal product the KKT factorization needs. The stacked MPC
//! constraint matrices have a few nonzeros per row, which is the only case
//! this needs to be good at.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::config(format!(
                    "triplet ({r}, {c}) outside a {nrows}×{ncols} matrix"
                )));
            }
        }
        let mut sorted: Vec<&(usize, usize, f64)> = triplets.iter().collect();
        sorted.sort_by_key(|&&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &&(r, c, v) in &sorted {
            if prev == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                prev = Some((r, c));
            }
            row_ptr[r + 1] = col_idx.len();
        }
        // Forward-fill row pointers for empty rows.
        for r in 1..=nrows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        let mut m = SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        };
        m.prune_zeros();
        Ok(m)
    }

    fn prune_zeros(&mut self) {
        let mut new_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            new_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = new_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), &triplets)
            .expect("triplets from a dense matrix are always in range")
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &triplets).unwrap()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[(r, self.col_idx[k])] += self.values[k];
            }
        }
        out
    }

    /// `out = self · x`.
    pub fn mul_vec(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[r] = acc;
        }
    }

    /// `out = selfᵀ · y`.
    pub fn tr_mul_vec(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.fill(0.0);
        for r in 0..self.nrows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[k]] += self.values[k] * yr;
            }
        }
    }

    /// Dense `selfᵀ · self`, accumulated row by row.
    pub fn normal_product_dense(&self) -> DMatrix<f64> {
        self.weighted_normal_product_dense(None)
    }

    /// Dense `selfᵀ · diag(w) · self` (plain normal product when `w` is
    /// `None`).
    pub fn weighted_normal_product_dense(&self, w: Option<&DVector<f64>>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, self.ncols);
        for r in 0..self.nrows {
            let weight = w.map_or(1.0, |w| w[r]);
            let range = self.row_ptr[r]..self.row_ptr[r + 1];
            for k1 in range.clone() {
                let (c1, v1) = (self.col_idx[k1], self.values[k1] * weight);
                for k2 in range.clone() {
                    out[(c1, self.col_idx[k2])] += v1 * self.values[k2];
                }
            }
        }
        out
    }

    /// Add `self` (interpreted densely) into `target` scaled by `scale`.
    pub fn add_to_dense(&self, target: &mut DMatrix<f64>, scale: f64) {
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                target[(r, self.col_idx[k])] += scale * self.values[k];
            }
        }
    }

    /// Infinity norm of `self · x` computed without allocating.
    pub fn mul_vec_inf_norm(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            worst = worst.max(acc.abs());
        }
        worst
    }
}
