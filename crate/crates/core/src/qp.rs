//! Problem data, solutions, and residual evaluation for
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  Gx ≤ h
//!             Ax = b
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{norm_inf, CscMatrix};

/// Immutable QP data. `p` stores the upper triangle of the symmetric cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub(crate) p: CscMatrix,
    pub(crate) q: Vec<f64>,
    pub(crate) g: CscMatrix,
    pub(crate) h: Vec<f64>,
    pub(crate) a: CscMatrix,
    pub(crate) b: Vec<f64>,
    pub name: Option<String>,
}

impl QpProblem {
    /// Validates dimensions and finiteness. Entries of `p` below the diagonal
    /// are rejected; callers holding a full symmetric matrix should pass
    /// [`CscMatrix::upper_triangle`].
    pub fn new(
        p: CscMatrix,
        q: Vec<f64>,
        g: CscMatrix,
        h: Vec<f64>,
        a: CscMatrix,
        b: Vec<f64>,
    ) -> Result<Self> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::dim(format!("P is {}x{}, q has {n}", p.nrows(), p.ncols())));
        }
        if g.ncols() != n || g.nrows() != h.len() {
            return Err(Error::dim(format!(
                "G is {}x{}, h has {}, n = {n}",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(Error::dim(format!(
                "A is {}x{}, b has {}, n = {n}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if p.triplets().iter().any(|&(i, j, _)| i > j) {
            return Err(Error::dim("P must store the upper triangle only".to_string()));
        }
        for (label, ok) in [
            ("P", p.is_finite()),
            ("q", q.iter().all(|v| v.is_finite())),
            ("G", g.is_finite()),
            ("h", h.iter().all(|v| v.is_finite())),
            ("A", a.is_finite()),
            ("b", b.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(label.to_string()));
            }
        }
        Ok(QpProblem { p, q, g, h, a, b, name: None })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.h.len()
    }

    pub fn p_eq(&self) -> usize {
        self.b.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n(), self.m(), self.p_eq())
    }

    pub fn cost_matrix(&self) -> &CscMatrix {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn g(&self) -> &CscMatrix {
        &self.g
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn a(&self) -> &CscMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    fn check_len(&self, what: &str, v: &[f64], want: usize) -> Result<()> {
        if v.len() != want {
            return Err(Error::dim(format!("{what} has length {}, expected {want}", v.len())));
        }
        Ok(())
    }

    /// `Gx - h`
    pub fn ineq_value(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.h.iter().map(|v| -v).collect();
        self.g.mul_add(x, &mut r);
        r
    }

    /// `Ax - b`
    pub fn eq_value(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.b.iter().map(|v| -v).collect();
        self.a.mul_add(x, &mut r);
        r
    }

    /// `½ xᵀPx + qᵀx`
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.check_len("x", x, self.n())?;
        let px = self.p.sym_upper_mul_vec(x);
        Ok(x.iter().zip(&px).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + x.iter().zip(&self.q).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Exact ℓ1 penalty function `f(x) + μ_Iᵀ(Gx−h)₊ + μ_Eᵀ|Ax−b|`.
    pub fn elastic_objective(&self, x: &[f64], mu_i: Penalty<'_>, mu_e: Penalty<'_>) -> Result<f64> {
        let mu_i = mu_i.expand(self.m(), "mu_I")?;
        let mu_e = mu_e.expand(self.p_eq(), "mu_E")?;
        let f = self.objective(x)?;
        let gi: f64 = self
            .ineq_value(x)
            .iter()
            .zip(&mu_i)
            .map(|(r, m)| m * r.max(0.0))
            .sum();
        let ge: f64 = self.eq_value(x).iter().zip(&mu_e).map(|(r, m)| m * r.abs()).sum();
        Ok(f + gi + ge)
    }

    /// Stationarity `Px + q + Gᵀy_I + Aᵀy_E`.
    pub fn dual_residual(&self, x: &[f64], y_i: &[f64], y_e: &[f64]) -> Vec<f64> {
        let mut r = self.q.clone();
        self.p.sym_upper_mul_add(x, &mut r);
        self.g.tr_mul_add(y_i, &mut r);
        self.a.tr_mul_add(y_e, &mut r);
        r
    }

    /// Original-problem residual map `R(x, y_I, y_E)` stacked as
    /// `(stationarity, max(Gx − h, 0), Ax − b)`, with its infinity norm.
    pub fn qp_residual(&self, x: &[f64], y_i: &[f64], y_e: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len("x", x, self.n())?;
        self.check_len("y_I", y_i, self.m())?;
        self.check_len("y_E", y_e, self.p_eq())?;
        let mut r = self.dual_residual(x, y_i, y_e);
        r.extend(self.ineq_value(x).into_iter().map(|v| v.max(0.0)));
        r.extend(self.eq_value(x));
        let inf = norm_inf(&r);
        Ok((r, inf))
    }
}

/// A penalty weight that is either shared by all constraints or given per constraint.
#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    Scalar(f64),
    PerConstraint(&'a [f64]),
}

impl Penalty<'_> {
    pub fn expand(&self, len: usize, label: &str) -> Result<Vec<f64>> {
        let v = match *self {
            Penalty::Scalar(s) => vec![s; len],
            Penalty::PerConstraint(v) => {
                if v.len() != len {
                    return Err(Error::dim(format!("{label} has length {}, expected {len}", v.len())));
                }
                v.to_vec()
            }
        };
        if v.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::param(format!("{label} entries must be positive")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Solved,
    SolvedInfeasibleOriginal,
    MaxIter,
    Timeout,
    Unbounded,
}

impl SolveStatus {
    pub fn converged(self) -> bool {
        matches!(self, SolveStatus::Solved | SolveStatus::SolvedInfeasibleOriginal)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y_i: Vec<f64>,
    pub y_e: Vec<f64>,
    /// Converged inequality violations; nonzero entries certify infeasibility.
    pub z_i: Vec<f64>,
    pub z_e: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub stats: BTreeMap<String, u64>,
    /// `‖R(x, y_I, y_E)‖∞` at the returned iterate.
    pub qp_residual_inf: f64,
    /// Largest relaxed-problem residual at the returned iterate.
    pub relaxed_residual_inf: f64,
}

impl QpSolution {
    pub fn stat(&self, key: &str) -> u64 {
        self.stats.get(key).copied().unwrap_or(0)
    }
}
