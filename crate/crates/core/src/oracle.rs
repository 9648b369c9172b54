//! Brute-force active-set reference solver for small QPs.
//!
//! Every subset of inequality constraints is tried as the active set, in
//! order of increasing size. The dense KKT system for each candidate is solved
//! with an LU factorization, independent of the sparse machinery used by the
//! ADMM solver. Exponential in `m`, so it refuses anything beyond desk scale.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{QpProblem, QpSolution, SolveStatus};
use crate::solver::{solve, ParamDefaults, SolveSettings};
use crate::policy::ParamPolicy;
use crate::sparse::norm_inf;

pub const ORACLE_MAX_N: usize = 30;
pub const ORACLE_MAX_M: usize = 30;
const KKT_TOL: f64 = 1e-9;

pub fn oracle_solve(prob: &QpProblem) -> Result<QpSolution> {
    let (n, m, p) = prob.dims();
    if n > ORACLE_MAX_N || m > ORACLE_MAX_M {
        return Err(Error::OracleRefused(format!(
            "n = {n}, m = {m} exceeds the {ORACLE_MAX_N}/{ORACLE_MAX_M} enumeration limit"
        )));
    }

    let pd = DMatrix::from_row_slice(n, n, &prob.cost_matrix().sym_upper_to_dense());
    let gd = DMatrix::from_row_slice(m, n, &prob.g().to_dense());
    let ad = DMatrix::from_row_slice(p, n, &prob.a().to_dense());
    let scale = 1.0 + norm_inf(prob.h()).max(norm_inf(prob.b())).max(norm_inf(prob.q()));

    let mut subset: Vec<usize> = Vec::with_capacity(m);
    for k in 0..=m {
        // lexicographic k-combinations of 0..m
        subset.clear();
        subset.extend(0..k);
        loop {
            if let Some(sol) = try_active_set(prob, &pd, &gd, &ad, &subset, scale) {
                return Ok(sol);
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }

    if phase_one_infeasible(prob)? {
        let mut sol = empty_solution(n, m, p, SolveStatus::SolvedInfeasibleOriginal);
        sol.qp_residual_inf = f64::INFINITY;
        return Ok(sol);
    }
    Err(Error::OracleRefused(
        "no active set satisfies the KKT conditions (unbounded or degenerate instance)".to_string(),
    ))
}

fn next_combination(c: &mut [usize], m: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < m - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn try_active_set(
    prob: &QpProblem,
    pd: &DMatrix<f64>,
    gd: &DMatrix<f64>,
    ad: &DMatrix<f64>,
    active: &[usize],
    scale: f64,
) -> Option<QpSolution> {
    let (n, m, p) = prob.dims();
    let k = active.len();
    let dim = n + k + p;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(pd);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = gd[(i, j)];
            kkt[(j, n + r)] = gd[(i, j)];
        }
        rhs[n + r] = prob.h()[i];
    }
    for e in 0..p {
        for j in 0..n {
            kkt[(n + k + e, j)] = ad[(e, j)];
            kkt[(j, n + k + e)] = ad[(e, j)];
        }
        rhs[n + k + e] = prob.b()[e];
    }
    for j in 0..n {
        rhs[j] = -prob.q()[j];
    }

    let sol = kkt.clone().lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // reject numerically singular systems whose "solution" does not solve them
    let lin_res = (&kkt * &sol - &rhs).amax();
    if lin_res > 1e-9 * scale {
        return None;
    }

    let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    let mut y_i = vec![0.0; m];
    for (r, &i) in active.iter().enumerate() {
        y_i[i] = sol[n + r];
    }
    let y_e: Vec<f64> = sol.rows(n + k, p).iter().copied().collect();

    if y_i.iter().any(|&y| y < -1e-10) {
        return None;
    }
    let slack = prob.ineq_value(&x);
    if slack.iter().any(|&s| s > KKT_TOL * scale) {
        return None;
    }
    let (_, res) = prob.qp_residual(&x, &y_i, &y_e).ok()?;
    if res > KKT_TOL * scale {
        return None;
    }

    let mut out = empty_solution(n, m, p, SolveStatus::Solved);
    out.x = x;
    out.y_i = y_i;
    out.y_e = y_e;
    out.qp_residual_inf = res;
    out.stats.insert("active_set_size".to_string(), k as u64);
    Some(out)
}

fn empty_solution(n: usize, m: usize, p: usize, status: SolveStatus) -> QpSolution {
    QpSolution {
        x: vec![0.0; n],
        y_i: vec![0.0; m],
        y_e: vec![0.0; p],
        z_i: vec![0.0; m],
        z_e: vec![0.0; p],
        status,
        iterations: 0,
        stats: BTreeMap::new(),
        qp_residual_inf: 0.0,
        relaxed_residual_inf: 0.0,
    }
}

/// Minimizes the total constraint violation with the elastic solver (zero
/// objective, unit penalties) and reports whether any violation remains.
fn phase_one_infeasible(prob: &QpProblem) -> Result<bool> {
    let (n, _, _) = prob.dims();
    let feas = QpProblem::new(
        crate::sparse::CscMatrix::zeros(n, n),
        vec![0.0; n],
        prob.g().clone(),
        prob.h().to_vec(),
        prob.a().clone(),
        prob.b().to_vec(),
    )?;
    let defaults = ParamDefaults {
        mu_i: 1.0,
        mu_e: 1.0,
        sigma_x: 1e-3,
        ..ParamDefaults::default()
    };
    let settings = SolveSettings {
        eps_abs: 1e-7,
        max_iter: 50_000,
        policy: ParamPolicy::Fixed(defaults),
        ..SolveSettings::default()
    };
    let (sol, _) = solve(&feas, &settings, None)?;
    Ok(norm_inf(&sol.z_i).max(norm_inf(&sol.z_e)) > 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CscMatrix;

    #[test]
    fn scalar_lower_bound() {
        // min x² s.t. x ≥ 1  →  x* = 1, y* = 2
        let prob = QpProblem::new(
            CscMatrix::diagonal(&[2.0]),
            vec![0.0],
            CscMatrix::diagonal(&[-1.0]),
            vec![-1.0],
            CscMatrix::zeros(0, 1),
            vec![],
        )
        .unwrap();
        let sol = oracle_solve(&prob).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.y_i[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equality_symmetry() {
        let prob = QpProblem::new(
            CscMatrix::identity(2),
            vec![0.0, 0.0],
            CscMatrix::zeros(0, 2),
            vec![],
            CscMatrix::from_dense(1, 2, &[1.0, 1.0]),
            vec![1.0],
        )
        .unwrap();
        let sol = oracle_solve(&prob).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_instances() {
        let n = 31;
        let prob = QpProblem::new(
            CscMatrix::identity(n),
            vec![0.0; n],
            CscMatrix::zeros(0, n),
            vec![],
            CscMatrix::zeros(0, n),
            vec![],
        )
        .unwrap();
        assert!(matches!(oracle_solve(&prob), Err(Error::OracleRefused(_))));
    }

    #[test]
    fn contradictory_bounds_reported_infeasible() {
        // x ≤ 0 and x ≥ 1
        let prob = QpProblem::new(
            CscMatrix::diagonal(&[1.0]),
            vec![0.0],
            CscMatrix::from_dense(2, 1, &[1.0, -1.0]),
            vec![0.0, -1.0],
            CscMatrix::zeros(0, 1),
            vec![],
        )
        .unwrap();
        let sol = oracle_solve(&prob).unwrap();
        assert_eq!(sol.status, SolveStatus::SolvedInfeasibleOriginal);
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut c, 4) {
            count += 1;
        }
        assert_eq!(count, 6);
    }
}
