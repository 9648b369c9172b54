//! Column-compressed sparse matrices.
//!
//! Row indices within each column are sorted and unique. Duplicate triplets
//! are summed at construction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            val: d.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed; explicit zeros are kept so that sparsity patterns stay stable.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::dim(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
        }
        let mut counts = vec![0usize; ncols];
        for &(_, j, _) in triplets {
            counts[j] += 1;
        }
        let mut col_ptr = vec![0usize; ncols + 1];
        for j in 0..ncols {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let mut next = col_ptr.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        for &(i, j, v) in triplets {
            rows[next[j]] = i;
            vals[next[j]] = v;
            next[j] += 1;
        }

        let mut out_ptr = vec![0usize; ncols + 1];
        let mut out_rows = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            scratch.extend((col_ptr[j]..col_ptr[j + 1]).map(|k| (rows[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(i, v) in scratch.iter() {
                if out_rows.len() > out_ptr[j] && *out_rows.last().unwrap() == i {
                    *out_vals.last_mut().unwrap() += v;
                } else {
                    out_rows.push(i);
                    out_vals.push(v);
                }
            }
            out_ptr[j + 1] = out_rows.len();
        }
        Ok(CscMatrix {
            nrows,
            ncols,
            col_ptr: out_ptr,
            row_idx: out_rows,
            val: out_vals,
        })
    }

    /// Dense row-major input; zeros are dropped.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        let mut t = Vec::new();
        for i in 0..nrows {
            for j in 0..ncols {
                let v = data[i * ncols + j];
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t).expect("indices in range")
    }

    /// Reassembles a matrix from raw CSC arrays, validating structure.
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        val: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != ncols + 1 || col_ptr[0] != 0 {
            return Err(Error::dim(format!("col_ptr length {} for {ncols} columns", col_ptr.len())));
        }
        if row_idx.len() != val.len() || *col_ptr.last().unwrap() != val.len() {
            return Err(Error::dim("row_idx/val length disagrees with col_ptr".to_string()));
        }
        for j in 0..ncols {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(Error::dim("col_ptr not monotone".to_string()));
            }
            let col = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if col.iter().any(|&i| i >= nrows) || col.windows(2).any(|w| w[0] >= w[1]) {
                // fall back to canonicalizing through triplets
                let t = Self::triplets_of(&col_ptr, &row_idx, &val);
                return Self::from_triplets(nrows, ncols, &t);
            }
        }
        Ok(CscMatrix { nrows, ncols, col_ptr, row_idx, val })
    }

    fn triplets_of(col_ptr: &[usize], row_idx: &[usize], val: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(val.len());
        for j in 0..col_ptr.len() - 1 {
            for k in col_ptr[j]..col_ptr[j + 1] {
                t.push((row_idx[k], j, val[k]));
            }
        }
        t
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        Self::triplets_of(&self.col_ptr, &self.row_idx, &self.val)
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.row_idx[k], self.val[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let rows = &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]];
        match rows.binary_search(&i) {
            Ok(k) => self.val[self.col_ptr[j] + k],
            Err(_) => 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.val.iter().all(|v| v.is_finite())
    }

    /// `out += A x`
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k]] += self.val[k] * xj;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.mul_add(x, &mut out);
        out
    }

    /// `out += Aᵀ y`
    pub fn tr_mul_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.val[k] * y[self.row_idx[k]];
            }
            *o += acc;
        }
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.tr_mul_add(y, &mut out);
        out
    }

    /// `out += S x` where `self` stores the upper triangle of a symmetric `S`.
    pub fn sym_upper_mul_add(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.ncols {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                let v = self.val[k];
                out[i] += v * x[j];
                if i != j {
                    out[j] += v * x[i];
                }
            }
        }
    }

    pub fn sym_upper_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.sym_upper_mul_add(x, &mut out);
        out
    }

    pub fn transpose(&self) -> CscMatrix {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        CscMatrix::from_triplets(self.ncols, self.nrows, &t).expect("indices in range")
    }

    /// Keeps entries with `row <= col`.
    pub fn upper_triangle(&self) -> CscMatrix {
        let t: Vec<_> = self.triplets().into_iter().filter(|&(i, j, _)| i <= j).collect();
        CscMatrix::from_triplets(self.nrows, self.ncols, &t).expect("indices in range")
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows * self.ncols];
        for (i, j, v) in self.triplets() {
            d[i * self.ncols + j] += v;
        }
        d
    }

    /// Dense copy of the symmetric matrix whose upper triangle is stored.
    pub fn sym_upper_to_dense(&self) -> Vec<f64> {
        let n = self.ncols;
        let mut d = vec![0.0; n * n];
        for (i, j, v) in self.triplets() {
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
        d
    }

    /// Permutes rows: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> CscMatrix {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (inv[i], j, v)).collect();
        CscMatrix::from_triplets(self.nrows, self.ncols, &t).expect("indices in range")
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
