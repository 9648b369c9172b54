use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Relative tolerance on `‖r‖₂ / ‖rhs‖₂`.
    pub tol: f64,
    /// `None` means `10 n`.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl CgConfig {
    /// Default configuration tied to a solver tolerance (`1e-2 ε`).
    pub fn for_eps(eps_abs: f64) -> Self {
        CgConfig {
            tol: 1e-2 * eps_abs,
            max_iter: None,
            preconditioner: Preconditioner::None,
        }
    }

    pub fn with_tol(tol: f64) -> Self {
        CgConfig { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param("cg tol must be positive"));
        }
        if self.max_iter == Some(0) {
            return Err(Error::param("cg max_iter must be at least 1"));
        }
        Ok(())
    }
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig::for_eps(1e-3)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

/// Preconditioned conjugate gradients for an SPD operator.
///
/// On curvature breakdown (`pᵀKp ≤ 0`) the method restarts once from the
/// current iterate; a second breakdown is an error. Reaching `max_iter`
/// returns the last iterate with `converged = false`.
pub fn conjugate_gradient<F, D>(
    apply: F,
    rhs: &[f64],
    x0: &[f64],
    cfg: &CgConfig,
    diagonal: D,
) -> Result<CgOutcome>
where
    F: Fn(&[f64], &mut [f64]),
    D: FnOnce() -> Vec<f64>,
{
    cfg.validate()?;
    let n = rhs.len();
    let max_iter = cfg.max_iter.unwrap_or(10 * n.max(1));
    let inv_diag: Option<Vec<f64>> = match cfg.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(diagonal().into_iter().map(|d| 1.0 / d).collect()),
    };
    let precond = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(dinv) => {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(dinv) {
                *zi = ri * di;
            }
        }
        None => z.copy_from_slice(r),
    };

    let rhs_norm = norm2(rhs);
    let target = cfg.tol * rhs_norm;
    let mut x = if x0.len() == n { x0.to_vec() } else { vec![0.0; n] };
    if rhs_norm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, converged: true, residual_norm: 0.0 });
    }

    let mut kx = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut kp = vec![0.0; n];
    let mut restarted = false;
    let mut iterations = 0;

    'restart: loop {
        apply(&x, &mut kx);
        for i in 0..n {
            r[i] = rhs[i] - kx[i];
        }
        let mut rnorm = norm2(&r);
        if rnorm <= target {
            return Ok(CgOutcome { x, iterations, converged: true, residual_norm: rnorm });
        }
        precond(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);

        while iterations < max_iter {
            apply(&p, &mut kp);
            let curv = dot(&p, &kp);
            if !(curv > 0.0) {
                if restarted {
                    return Err(Error::CgBreakdown(iterations));
                }
                restarted = true;
                continue 'restart;
            }
            let step = rz / curv;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * kp[i];
            }
            iterations += 1;
            rnorm = norm2(&r);
            if rnorm <= target {
                return Ok(CgOutcome { x, iterations, converged: true, residual_norm: rnorm });
            }
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        return Ok(CgOutcome { x, iterations, converged: false, residual_norm: rnorm });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_apply(v: &[f64], out: &mut [f64]) {
        // tridiag(-1, 4, -1)
        let n = v.len();
        for i in 0..n {
            out[i] = 4.0 * v[i];
            if i > 0 {
                out[i] -= v[i - 1];
            }
            if i + 1 < n {
                out[i] -= v[i + 1];
            }
        }
    }

    #[test]
    fn solves_tridiagonal_with_and_without_jacobi() {
        let rhs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        for pc in [Preconditioner::None, Preconditioner::Jacobi] {
            let cfg = CgConfig { tol: 1e-12, max_iter: None, preconditioner: pc };
            let out = conjugate_gradient(spd_apply, &rhs, &[], &cfg, || vec![4.0; 5]).unwrap();
            assert!(out.converged);
            let mut k = vec![0.0; 5];
            spd_apply(&out.x, &mut k);
            for (a, b) in k.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn warm_start_at_solution_takes_no_iterations() {
        let x = vec![0.5, -1.0, 2.0];
        let mut rhs = vec![0.0; 3];
        spd_apply(&x, &mut rhs);
        let out = conjugate_gradient(spd_apply, &rhs, &x, &CgConfig::with_tol(1e-10), || vec![]).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn max_iter_flags_nonconvergence() {
        let cfg = CgConfig { tol: 1e-14, max_iter: Some(1), preconditioner: Preconditioner::None };
        let out = conjugate_gradient(spd_apply, &[1.0, 0.0, 0.0, 0.0, 1.0], &[], &cfg, || vec![]).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn indefinite_operator_errors_after_restart() {
        let neg = |v: &[f64], out: &mut [f64]| {
            for (o, x) in out.iter_mut().zip(v) {
                *o = -x;
            }
        };
        let r = conjugate_gradient(neg, &[1.0, 1.0], &[], &CgConfig::with_tol(1e-8), || vec![]);
        assert!(matches!(r, Err(Error::CgBreakdown(_))));
    }
}
