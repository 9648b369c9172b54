//! Sequential quadratic programming on top of the elastic QP solver.
//!
//! Each iteration linearizes the constraints and quadraticizes the Lagrangian
//! around the current point; because the subproblem is solved in its elastic
//! form, an inconsistent linearization still yields a usable step.

mod dynamics;
mod ocp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::ldl::Symbolic;
use crate::policy::{AdaptiveConfig, ParamPolicy};
use crate::qp::{QpProblem, SolveStatus};
use crate::solver::{ParamDefaults, SolveSettings, SolverParams, SolverState};
use crate::sparse::{norm_inf, CscMatrix};

pub use dynamics::{euler_step, Dubins, Dynamics, Quadrotor};
pub use ocp::{
    DynamicsKind, Obstacle, OcpNlp, OcpSpec, SafetyFilterNlp, SafetyFilterSpec, SqpTrajectory,
};

/// A smooth NLP `min f(x) s.t. g(x) ≤ 0, h(x) = 0`.
pub trait Nlp {
    fn dims(&self) -> (usize, usize, usize);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn ineq(&self, x: &[f64]) -> Vec<f64>;
    fn ineq_jacobian(&self, x: &[f64]) -> CscMatrix;
    fn eq(&self, x: &[f64]) -> Vec<f64>;
    fn eq_jacobian(&self, x: &[f64]) -> CscMatrix;
    /// Upper triangle of the Lagrangian Hessian, or of a PSD surrogate.
    fn hessian(&self, x: &[f64], y_i: &[f64], y_e: &[f64]) -> CscMatrix;
    fn initial_guess(&self) -> Vec<f64> {
        vec![0.0; self.dims().0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HessianMode {
    /// Cost Hessian only; constraint curvature dropped.
    GaussNewton,
    Exact,
}

#[derive(Debug, Clone)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub eps: f64,
    /// Settings for each QP subproblem.
    pub qp: SolveSettings,
    /// ℓ1-merit backtracking; `false` takes full steps.
    pub line_search: bool,
    pub armijo: f64,
    pub max_halvings: usize,
    pub hess_reg: f64,
    /// Floor for the tightened subproblem tolerance.
    pub qp_eps_min: f64,
    /// Times a subproblem is re-solved 10× tighter when its step is not a
    /// descent direction for the merit model.
    pub max_refinements: usize,
    /// Warm-start each subproblem from the previous one's final ADMM state.
    pub warm_start: bool,
    pub record_iterates: bool,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            max_iter: 50,
            eps: 1e-2,
            qp: SolveSettings {
                eps_abs: 1e-3,
                max_iter: 20_000,
                time_limit: Some(std::time::Duration::from_secs(10)),
                policy: ParamPolicy::Adaptive(AdaptiveConfig { mu_max: ParamDefaults::default().mu_i, ..AdaptiveConfig::default() }),
                ..SolveSettings::default()
            },
            line_search: true,
            armijo: 1e-4,
            max_halvings: 30,
            hess_reg: 1e-8,
            qp_eps_min: 1e-7,
            max_refinements: 3,
            warm_start: true,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqpStatus {
    Converged,
    MaxIter,
    /// Line search found no acceptable step.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpIterate {
    pub k: usize,
    pub residual: f64,
    pub merit: f64,
    pub step: f64,
    pub qp_status: Option<SolveStatus>,
    pub qp_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub y_i: Vec<f64>,
    pub y_e: Vec<f64>,
    pub status: SqpStatus,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<SqpIterate>,
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluator(what.to_string()))
    }
}

/// Lower bound on the smallest eigenvalue of a symmetric matrix given by its
/// upper triangle.
pub fn gershgorin_min(upper: &CscMatrix) -> f64 {
    let n = upper.ncols();
    let mut diag = vec![0.0; n];
    let mut radius = vec![0.0; n];
    for (i, j, v) in upper.triplets() {
        if i == j {
            diag[i] += v;
        } else {
            radius[i] += v.abs();
            radius[j] += v.abs();
        }
    }
    (0..n).map(|i| diag[i] - radius[i]).fold(f64::INFINITY, f64::min)
}

fn shifted(upper: &CscMatrix, shift: f64) -> Result<CscMatrix> {
    let n = upper.ncols();
    let mut t = upper.triplets();
    t.extend((0..n).map(|i| (i, i, shift)));
    CscMatrix::from_triplets(n, n, &t)
}

/// `H + δI` with `δ = reg` when Gershgorin already certifies `H ⪰ 0`;
/// otherwise the first doubling shift whose LDLᵀ has only positive
/// pivots, falling back to the Gershgorin shift.
fn convexify(upper: &CscMatrix, reg: f64) -> Result<CscMatrix> {
    let lam = gershgorin_min(upper);
    if lam >= 0.0 {
        return shifted(upper, reg);
    }
    let sym = Symbolic::analyze(&shifted(upper, 1.0)?);
    let min_diag = (0..upper.ncols()).map(|i| upper.get(i, i)).fold(f64::INFINITY, f64::min);
    let mut delta = if min_diag > 0.0 { 0.0 } else { 1e-3 - min_diag };
    for _ in 0..64 {
        if delta >= -lam {
            break;
        }
        let cand = shifted(upper, delta + reg)?;
        if matches!(sym.factor(&cand), Ok(num) if num.negative_pivots() == 0) {
            return Ok(cand);
        }
        delta = (2.0 * delta).max(1e-3);
    }
    shifted(upper, reg - lam)
}

/// The QP in the step `dx` at `x`: `P = ∇²L + reg·I` (shifted to be PSD when
/// `H` is not positive semidefinite), `q = ∇f`, `G = ∂g`, `h = −g`,
/// `A = ∂h`, `b = −h`.
pub fn build_subproblem(nlp: &dyn Nlp, x: &[f64], y_i: &[f64], y_e: &[f64], hess_reg: f64) -> Result<QpProblem> {
    let hess = nlp.hessian(x, y_i, y_e);
    check_finite("hessian", &hess.val)?;
    let p = convexify(&hess, hess_reg)?;

    let grad = nlp.gradient(x);
    check_finite("gradient", &grad)?;
    let g = nlp.ineq(x);
    check_finite("ineq", &g)?;
    let h = nlp.eq(x);
    check_finite("eq", &h)?;
    let jg = nlp.ineq_jacobian(x);
    check_finite("ineq_jacobian", &jg.val)?;
    let jh = nlp.eq_jacobian(x);
    check_finite("eq_jacobian", &jh.val)?;
    QpProblem::new(p, grad, jg, g.iter().map(|v| -v).collect(), jh, h.iter().map(|v| -v).collect())
}

/// Infinity norm of stationarity, primal infeasibility and the complementarity
/// function `min(y, −g)`.
pub fn nlp_residual(nlp: &dyn Nlp, x: &[f64], y_i: &[f64], y_e: &[f64]) -> f64 {
    let mut stat = nlp.gradient(x);
    nlp.ineq_jacobian(x).tr_mul_add(y_i, &mut stat);
    nlp.eq_jacobian(x).tr_mul_add(y_e, &mut stat);
    let g = nlp.ineq(x);
    let h = nlp.eq(x);
    let primal = g.iter().fold(norm_inf(&h), |a, &v| a.max(v));
    let comp = g.iter().zip(y_i).fold(0.0f64, |a, (&gi, &yi)| a.max(yi.min(-gi).abs()));
    let r = norm_inf(&stat).max(primal).max(comp);
    if r.is_finite() {
        r
    } else {
        f64::INFINITY
    }
}

fn violation_l1(nlp: &dyn Nlp, x: &[f64]) -> f64 {
    nlp.ineq(x).iter().map(|v| v.max(0.0)).sum::<f64>() + nlp.eq(x).iter().map(|v| v.abs()).sum::<f64>()
}

pub fn merit(nlp: &dyn Nlp, x: &[f64], mu: f64) -> f64 {
    nlp.objective(x) + mu * violation_l1(nlp, x)
}

pub fn sqp_solve(nlp: &dyn Nlp, settings: &SqpSettings) -> Result<SqpResult> {
    sqp_solve_from(nlp, settings, nlp.initial_guess())
}

pub fn sqp_solve_from(nlp: &dyn Nlp, settings: &SqpSettings, x0: Vec<f64>) -> Result<SqpResult> {
    let (n, m, p) = nlp.dims();
    if x0.len() != n {
        return Err(Error::dim(format!("initial guess has {} entries, expected {n}", x0.len())));
    }
    let mut x = x0;
    let mut y_i = vec![0.0; m];
    let mut y_e = vec![0.0; p];
    let mut history = Vec::new();
    let mut mu_merit = 1.0f64;
    let mut warm: Option<SolverState> = None;
    let mut status = SqpStatus::MaxIter;
    let mut k = 0;

    loop {
        let residual = nlp_residual(nlp, &x, &y_i, &y_e);
        let mut rec = SqpIterate {
            k,
            residual,
            merit: merit(nlp, &x, mu_merit),
            step: 0.0,
            qp_status: None,
            qp_iterations: 0,
            x: settings.record_iterates.then(|| x.clone()),
        };
        if residual <= settings.eps {
            history.push(rec);
            status = SqpStatus::Converged;
            break;
        }
        if k >= settings.max_iter {
            history.push(rec);
            break;
        }

        let qp = build_subproblem(nlp, &x, &y_i, &y_e, settings.hess_reg)?;
        let mut qp_settings = settings.qp.clone();
        let mut start = warm.take();
        let mut refinements = 0;
        let (sol, weight) = loop {
            let report = crate::solver::solve_detailed(&qp, &qp_settings, start.as_ref())?;
            rec.qp_iterations += report.solution.iterations;
            let mut st = report.state;
            st.k = 0;
            let sol = report.solution;
            let weight = merit_weight(&sol, report.params.as_ref());
            let descent = !settings.line_search || {
                let mu = mu_merit.max(weight);
                model_change(nlp, &x, &sol.x, &qp, mu) < 0.0
            };
            if descent || refinements >= settings.max_refinements || qp_settings.eps_abs <= settings.qp_eps_min {
                if settings.warm_start {
                    warm = Some(st);
                }
                break (sol, weight);
            }
            // inexact step is not a descent direction: tighten and continue
            qp_settings.eps_abs = (0.1 * qp_settings.eps_abs).max(settings.qp_eps_min);
            start = Some(st);
            refinements += 1;
        };
        rec.qp_status = Some(sol.status);
        let dx = &sol.x;

        let step = if settings.line_search {
            mu_merit = mu_merit.max(weight);
            line_search(nlp, &x, dx, &qp, mu_merit, settings)
        } else {
            Some(1.0)
        };
        k += 1;
        match step {
            Some(t) => {
                for (xi, di) in x.iter_mut().zip(&sol.x) {
                    *xi += t * di;
                }
                rec.step = t;
                y_i = sol.y_i;
                y_e = sol.y_e;
                history.push(rec);
            }
            None => {
                history.push(rec);
                status = SqpStatus::Stalled;
                break;
            }
        }
    }
    let residual = nlp_residual(nlp, &x, &y_i, &y_e);
    Ok(SqpResult { x, y_i, y_e, status, iterations: k, residual, history })
}

/// `2·max|y| + 1`, capped at the subproblem's smallest elastic penalty so the
/// merit never weighs violation more than the QP that produced the step.
/// Since `|y| ≤ μ`, the result still bounds every multiplier.
fn merit_weight(sol: &crate::qp::QpSolution, params: Option<&SolverParams>) -> f64 {
    let w = 2.0 * norm_inf(&sol.y_i).max(norm_inf(&sol.y_e)) + 1.0;
    match params {
        Some(p) => w.min(p.mu_i.iter().chain(&p.mu_e).fold(f64::INFINITY, |a, &b| a.min(b))),
        None => w,
    }
}

/// Change in the linearized ℓ1 merit along `dx`:
/// `∇fᵀdx + μ(‖lin. violation at dx‖₁ − ‖violation at x‖₁)`.
fn model_change(nlp: &dyn Nlp, x: &[f64], dx: &[f64], qp: &QpProblem, mu: f64) -> f64 {
    let grad_dx: f64 = qp.q().iter().zip(dx).map(|(a, b)| a * b).sum();
    // G·dx − h = g + ∂g·dx, and likewise for the equalities
    let lin_viol = qp.ineq_value(dx).iter().map(|v| v.max(0.0)).sum::<f64>()
        + qp.eq_value(dx).iter().map(|v| v.abs()).sum::<f64>();
    grad_dx + mu * (lin_viol - violation_l1(nlp, x))
}

/// Backtracking on `φ(x) = f(x) + μ‖violation‖₁` with an Armijo test against
/// the linearized model's predicted change.
fn line_search(nlp: &dyn Nlp, x: &[f64], dx: &[f64], qp: &QpProblem, mu: f64, s: &SqpSettings) -> Option<f64> {
    let phi0 = merit(nlp, x, mu);
    let slope = model_change(nlp, x, dx, qp, mu).min(0.0);

    let mut t = 1.0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..=s.max_halvings {
        for ((tr, xi), di) in trial.iter_mut().zip(x).zip(dx) {
            *tr = xi + t * di;
        }
        let phi = merit(nlp, &trial, mu);
        if phi.is_finite() && phi <= phi0 + s.armijo * t * slope && (slope < 0.0 || phi < phi0 - 1e-12) {
            return Some(t);
        }
        t *= 0.5;
    }
    None
}
