//! Up-looking sparse LDLᵀ for quasi-definite matrices.
//!
//! The symbolic phase (ordering, elimination tree, column counts) depends only
//! on the sparsity pattern and is computed once; numeric factorizations reuse
//! it for every new set of values.

use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

use super::ordering::{inverse, minimum_degree};

#[derive(Debug, Clone)]
pub struct Symbolic {
    pub(crate) n: usize,
    /// `perm[new] = old`
    pub(crate) perm: Vec<usize>,
    /// Upper-triangular pattern of the permuted matrix.
    c_ptr: Vec<usize>,
    c_idx: Vec<usize>,
    /// Position of each source value inside the permuted storage.
    src_to_c: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(upper: &CscMatrix) -> Symbolic {
        let n = upper.ncols();
        let perm = minimum_degree(upper);
        let inv = inverse(&perm);

        // permuted upper triangle, remembering where each source entry lands
        let src = upper.triplets();
        let mut counts = vec![0usize; n];
        let mapped: Vec<(usize, usize)> = src
            .iter()
            .map(|&(i, j, _)| {
                let (a, b) = (inv[i], inv[j]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                counts[c] += 1;
                (r, c)
            })
            .collect();
        let mut c_ptr = vec![0usize; n + 1];
        for j in 0..n {
            c_ptr[j + 1] = c_ptr[j] + counts[j];
        }
        let mut order: Vec<usize> = (0..src.len()).collect();
        order.sort_by_key(|&k| (mapped[k].1, mapped[k].0));
        let mut c_idx = vec![0usize; src.len()];
        let mut src_to_c = vec![0usize; src.len()];
        for (pos, &k) in order.iter().enumerate() {
            c_idx[pos] = mapped[k].0;
            src_to_c[k] = pos;
        }

        // elimination tree and column counts of L
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in c_ptr[k]..c_ptr[k + 1] {
                let mut i = c_idx[p];
                while i < k && flag[i] != k {
                    if parent[i].is_none() {
                        parent[i] = Some(k);
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i].unwrap();
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        Symbolic { n, perm, c_ptr, c_idx, src_to_c, parent, l_ptr }
    }

    pub fn l_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Numeric factorization of a matrix sharing the analyzed pattern.
    /// `upper` must have exactly the pattern passed to [`Symbolic::analyze`].
    pub fn factor(&self, upper: &CscMatrix) -> Result<Numeric> {
        let n = self.n;
        debug_assert_eq!(upper.nnz(), self.src_to_c.len());
        let mut c_val = vec![0.0; self.c_idx.len()];
        for (k, &pos) in self.src_to_c.iter().enumerate() {
            c_val[pos] += upper.val[k];
        }

        let nnz = self.l_nnz();
        let mut l_idx = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];

        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            lnz[k] = 0;
            for p in self.c_ptr[k]..self.c_ptr[k + 1] {
                let mut i = self.c_idx[p];
                y[i] += c_val[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i].expect("etree path ends at k");
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            while top < n {
                let i = pattern[top];
                let yi = y[i];
                y[i] = 0.0;
                let end = self.l_ptr[i] + lnz[i];
                for p in self.l_ptr[i]..end {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[end] = k;
                l_val[end] = l_ki;
                lnz[i] += 1;
                top += 1;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::ZeroPivot(self.perm[k]));
            }
        }
        Ok(Numeric { l_idx, l_val, d })
    }

    /// Solves `K x = rhs` in the original ordering.
    pub fn solve(&self, num: &Numeric, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut w: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for j in 0..n {
            let wj = w[j];
            if wj != 0.0 {
                for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                    w[num.l_idx[p]] -= num.l_val[p] * wj;
                }
            }
        }
        for j in 0..n {
            w[j] /= num.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = w[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                acc -= num.l_val[p] * w[num.l_idx[p]];
            }
            w[j] = acc;
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = w[new];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Numeric {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    pub(crate) d: Vec<f64>,
}

impl Numeric {
    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    /// Number of negative pivots; equals the size of the negative-definite
    /// block for quasi-definite input.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    /// Dense `L` (unit lower triangular, permuted ordering), for testing.
    pub fn dense_l(&self, sym: &Symbolic) -> Vec<f64> {
        let n = sym.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            l[j * n + j] = 1.0;
            for p in sym.l_ptr[j]..sym.l_ptr[j + 1] {
                l[self.l_idx[p] * n + j] = self.l_val[p];
            }
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_indefinite() {
        let k = CscMatrix::diagonal(&[2.0, -1.0]);
        let sym = Symbolic::analyze(&k);
        let num = sym.factor(&k).unwrap();
        assert_eq!(sym.solve(&num, &[4.0, 3.0]), vec![2.0, -3.0]);
        assert_eq!(num.negative_pivots(), 1);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let k = CscMatrix::from_triplets(2, 2, &[(0, 0, 0.0), (1, 1, 1.0)]).unwrap();
        let sym = Symbolic::analyze(&k);
        assert!(matches!(sym.factor(&k), Err(Error::ZeroPivot(0))));
    }

    #[test]
    fn small_quasi_definite_solve() {
        // [[4, 1, 1], [1, -1, 0], [1, 0, -2]]
        let k = CscMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 1, -1.0), (0, 2, 1.0), (2, 2, -2.0)],
        )
        .unwrap();
        let sym = Symbolic::analyze(&k);
        let num = sym.factor(&k).unwrap();
        let x = sym.solve(&num, &[1.0, 2.0, 3.0]);
        let r = k.sym_upper_mul_vec(&x);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
