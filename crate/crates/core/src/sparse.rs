//! Compressed-row storage for the symmetric FEM matrices.
//!
//! Matrices are assembled from unsorted triplets; duplicates are summed and
//! column indices within a row are sorted, so structural symmetry can be
//! checked by a direct transpose lookup.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{check_len, Result};

/// Coordinate-format accumulator used during element assembly.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        // Off-diagonal entries that cancel exactly (the diagonal-split edge of
        // the P1 stiffness) are dropped from the pattern.
        let mut keep_ptr = vec![0usize; self.nrows + 1];
        let mut keep_col = Vec::with_capacity(col_idx.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for i in 0..self.nrows {
            for k in row_ptr[i]..row_ptr[i + 1] {
                if values[k] != 0.0 || col_idx[k] == i {
                    keep_col.push(col_idx[k]);
                    keep_val.push(values[k]);
                }
            }
            keep_ptr[i + 1] = keep_col.len();
        }
        let (row_ptr, col_idx, values) = (keep_ptr, keep_col, keep_val);
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Row-compressed sparse matrix. Used for `A`, `B_s`, `M_s` and `A_σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// `y = self * x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ncols, x.len())?;
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    /// Largest `|a_ij - a_ji|` over the stored pattern, including entries
    /// whose mirror is structurally absent.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let mirror = if j < self.nrows { self.get(j, i) } else { 0.0 };
                worst = worst.max((v - mirror).abs());
            }
        }
        worst
    }

    /// Symmetric permutation `P A Pᵀ` where `perm[old] = new`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> CsrMatrix {
        let mut t = TripletBuilder::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.push(perm[i], perm[j], v);
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Half-bandwidth `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Writes the matrix in Matrix Market coordinate format with 1-based
    /// indices. Symmetric matrices store their lower triangle only.
    pub fn write_matrix_market<W: Write>(&self, out: &mut W, symmetric: bool) -> io::Result<()> {
        let kind = if symmetric { "symmetric" } else { "general" };
        writeln!(out, "%%MatrixMarket matrix coordinate real {kind}")?;
        let entries: Vec<(usize, usize, f64)> = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .filter(|&(i, j, _)| !symmetric || j <= i)
            .collect();
        writeln!(out, "{} {} {}", self.nrows, self.ncols, entries.len())?;
        for (i, j, v) in entries {
            writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}
