//! The elastic ADMM iteration.
//!
//! Each iteration solves the first-block equality-constrained QP, recovers the
//! eliminated copies, then applies the relaxed second-block updates: a ReLU
//! projection for the slacks and soft thresholding for the violation
//! variables, followed by the dual updates.

mod params;
mod state;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{
    recover_block1_direct, should_refactor, solve_direct, solve_indirect, BlockParams, BlockSolution, CgConfig,
    KktFactorization, KktSystem,
};
use crate::policy::{ParamPolicy, PolicyInstance};
use crate::qp::{QpProblem, QpSolution, SolveStatus};
use crate::sparse::norm_inf;

pub use params::{ParamDefaults, SolverParams, PARAM_MAX, PARAM_MIN};
pub use state::{relaxed_residuals, BlockVectors, ResidualBundle, ResidualSummary, SolverState};

/// Relaxed residual magnitude treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Direct,
    Indirect(CgConfig),
}

#[derive(Debug, Clone)]
pub struct SolveSettings {
    pub eps_abs: f64,
    pub max_iter: usize,
    pub time_limit: Option<Duration>,
    pub method: Method,
    pub policy: ParamPolicy,
    /// Termination is tested every `check_every` iterations.
    pub check_every: usize,
    /// Record a [`ResidualSummary`] per iteration.
    pub trace: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            eps_abs: 1e-3,
            max_iter: 4000,
            time_limit: None,
            method: Method::Direct,
            policy: ParamPolicy::Fixed(ParamDefaults::default()),
            check_every: 1,
            trace: false,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0) {
            return Err(Error::param("eps_abs must be positive"));
        }
        if self.check_every == 0 {
            return Err(Error::param("check_every must be at least 1"));
        }
        if let Method::Indirect(cfg) = &self.method {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// `S_κ(v) = (v − κ)₊ − (−v − κ)₊` elementwise. A single-element `kappa` is
/// broadcast.
pub fn soft_threshold(v: &[f64], kappa: &[f64]) -> Result<Vec<f64>> {
    if kappa.iter().any(|&k| !(k >= 0.0)) {
        return Err(Error::param("soft threshold requires kappa >= 0"));
    }
    let k_at = |i: usize| if kappa.len() == 1 { kappa[0] } else { kappa[i] };
    if kappa.len() != 1 && kappa.len() != v.len() {
        return Err(Error::dim(format!("kappa has length {}, expected 1 or {}", kappa.len(), v.len())));
    }
    Ok(v.iter().enumerate().map(|(i, &x)| shrink(x, k_at(i))).collect())
}

#[inline]
fn shrink(x: f64, k: f64) -> f64 {
    (x - k).max(0.0) - (-x - k).max(0.0)
}

/// First-block solver with factorization caching.
///
/// With the direct method the factored `(σ_x, σ_s, ρ_I, ρ_E)` stay in force
/// until a proposal leaves the factor-of-five band; the elastic penalties and
/// `α` always follow the proposal.
#[derive(Debug)]
pub struct BlockSolver {
    method: Method,
    system: Option<KktSystem>,
    factorization: Option<KktFactorization>,
    pub factorizations: u64,
    pub cg_iterations: u64,
    pub cg_failures: u64,
}

impl BlockSolver {
    pub fn new(prob: &QpProblem, method: Method) -> Self {
        let system = matches!(method, Method::Direct).then(|| KktSystem::analyze(prob));
        BlockSolver {
            method,
            system,
            factorization: None,
            factorizations: 0,
            cg_iterations: 0,
            cg_failures: 0,
        }
    }

    /// Parameters actually used by the next step given a policy proposal.
    pub fn effective_params(&mut self, prob: &QpProblem, proposed: &SolverParams) -> Result<SolverParams> {
        match self.method {
            Method::Indirect(_) => Ok(proposed.clone()),
            Method::Direct => {
                let bp = BlockParams::from(proposed);
                let stale = match &self.factorization {
                    None => true,
                    Some(f) => should_refactor(&f.params_snapshot, &bp),
                };
                if stale {
                    let sys = self.system.as_ref().expect("direct method has a KKT system");
                    self.factorization = Some(sys.factor(prob, &bp)?);
                    self.factorizations += 1;
                }
                let snap = &self.factorization.as_ref().unwrap().params_snapshot;
                Ok(SolverParams {
                    sigma_x: snap.sigma_x,
                    sigma_s: snap.sigma_s.clone(),
                    rho_i: snap.rho_i.clone(),
                    rho_e: snap.rho_e.clone(),
                    ..proposed.clone()
                })
            }
        }
    }

    fn solve(&mut self, prob: &QpProblem, params: &SolverParams, state: &SolverState) -> Result<BlockSolution> {
        match &self.method {
            Method::Direct => {
                let fact = match &self.factorization {
                    Some(f) if f.params_snapshot == BlockParams::from(params) => f,
                    _ => {
                        let sys = self.system.as_ref().expect("direct method has a KKT system");
                        self.factorization = Some(sys.factor(prob, &BlockParams::from(params))?);
                        self.factorizations += 1;
                        self.factorization.as_ref().unwrap()
                    }
                };
                Ok(solve_direct(fact, prob, state))
            }
            Method::Indirect(cfg) => {
                let out = solve_indirect(prob, &BlockParams::from(params), state, cfg, &state.x_t)?;
                self.cg_iterations += out.cg_iterations as u64;
                if !out.cg_converged {
                    self.cg_failures += 1;
                }
                Ok(out)
            }
        }
    }
}

/// One full ADMM iteration from `state` with the given parameters.
pub fn admm_step(
    prob: &QpProblem,
    state: &SolverState,
    params: &SolverParams,
    block: &mut BlockSolver,
) -> Result<SolverState> {
    let (_, m, p) = prob.dims();
    let sol = block.solve(prob, params, state).map_err(|e| Error::Iteration {
        iteration: state.k,
        source: Box::new(e),
    })?;
    let bp = BlockParams::from(params);
    let (s_t, z_i_t, z_e_t) = recover_block1_direct(state, &bp, &sol.nu_i, &sol.nu_e);
    let a = params.alpha;
    let relax = |t: f64, prev: f64| a * t + (1.0 - a) * prev;

    let x: Vec<f64> = sol.x.iter().zip(&state.x).map(|(&t, &xk)| relax(t, xk)).collect();

    let mut s = vec![0.0; m];
    let mut w_s = vec![0.0; m];
    let mut z_i = vec![0.0; m];
    let mut y_i = vec![0.0; m];
    for i in 0..m {
        let (sig, rho) = (params.sigma_s[i], params.rho_i[i]);
        let s_rel = relax(s_t[i], state.s[i]);
        s[i] = (s_rel + state.w_s[i] / sig).max(0.0);
        w_s[i] = state.w_s[i] + sig * (s_rel - s[i]);

        let z_rel = relax(z_i_t[i], state.z_i[i]);
        z_i[i] = shrink(z_rel + state.y_i[i] / rho, params.mu_i[i] / rho);
        y_i[i] = state.y_i[i] + rho * (z_rel - z_i[i]);
    }

    let mut z_e = vec![0.0; p];
    let mut y_e = vec![0.0; p];
    for e in 0..p {
        let rho = params.rho_e[e];
        let z_rel = relax(z_e_t[e], state.z_e[e]);
        z_e[e] = shrink(z_rel + state.y_e[e] / rho, params.mu_e[e] / rho);
        y_e[e] = state.y_e[e] + rho * (z_rel - z_e[e]);
    }

    Ok(SolverState {
        x,
        x_t: sol.x,
        s,
        s_t,
        z_i,
        z_i_t,
        w_s,
        y_i,
        z_e,
        z_e_t,
        y_e,
        nu_i: sol.nu_i,
        nu_e: sol.nu_e,
        k: state.k + 1,
    })
}

/// Read-only view handed to solve observers before each step.
pub struct IterationView<'a> {
    pub state: &'a SolverState,
    pub bundle: &'a ResidualBundle,
    /// Parameters that produced `state` (`None` at the initial iterate).
    pub params: Option<&'a SolverParams>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: QpSolution,
    pub trace: Option<Vec<ResidualSummary>>,
    /// Final iterate, suitable as a warm start.
    pub state: SolverState,
    pub params: Option<SolverParams>,
}

/// Runs the iteration to termination.
pub fn solve(
    prob: &QpProblem,
    settings: &SolveSettings,
    warm_start: Option<&SolverState>,
) -> Result<(QpSolution, Option<Vec<ResidualSummary>>)> {
    let r = solve_observed(prob, settings, warm_start, |_| {})?;
    Ok((r.solution, r.trace))
}

pub fn solve_detailed(prob: &QpProblem, settings: &SolveSettings, warm_start: Option<&SolverState>) -> Result<SolveReport> {
    solve_observed(prob, settings, warm_start, |_| {})
}

/// [`solve`] with a callback invoked on every iterate (including the initial one).
pub fn solve_observed<F>(
    prob: &QpProblem,
    settings: &SolveSettings,
    warm_start: Option<&SolverState>,
    mut observe: F,
) -> Result<SolveReport>
where
    F: FnMut(&IterationView<'_>),
{
    settings.validate()?;
    let (_, m, p) = prob.dims();
    // the clock is only read under a time limit (it is unavailable on some targets)
    let start = settings.time_limit.map(|lim| (Instant::now(), lim));
    let mut state = match warm_start {
        Some(ws) => {
            ws.check_dims(prob)?;
            ws.clone()
        }
        None => SolverState::cold(prob),
    };
    let k0 = state.k;
    let mut policy = PolicyInstance::new(&settings.policy, m, p)?;
    let mut block = BlockSolver::new(prob, settings.method.clone());
    let mut prev: Option<SolverState> = None;
    let mut params: Option<SolverParams> = None;
    let mut trace = settings.trace.then(Vec::new);
    let mut best: Option<(f64, SolverState, f64)> = None;

    let status = loop {
        let bundle = relaxed_residuals(prob, &state, prev.as_ref());
        observe(&IterationView { state: &state, bundle: &bundle, params: params.as_ref() });
        let iters = state.k - k0;
        if let Some(t) = trace.as_mut() {
            t.push(bundle.summary(iters));
        }
        let metric = bundle.termination_metric();
        if best.as_ref().map_or(true, |b| bundle.qp_residual_inf < b.0) {
            best = Some((bundle.qp_residual_inf, state.clone(), metric));
        }

        if iters >= 1 && iters % settings.check_every == 0 {
            if !bundle.relaxed_inf().is_finite() || bundle.relaxed_inf() > DIVERGENCE_THRESHOLD {
                break SolveStatus::Unbounded;
            }
            if metric <= settings.eps_abs {
                let z_inf = norm_inf(&state.z_i).max(norm_inf(&state.z_e));
                if z_inf > settings.eps_abs {
                    break SolveStatus::SolvedInfeasibleOriginal;
                }
                if bundle.qp_residual_inf <= settings.eps_abs {
                    break SolveStatus::Solved;
                }
            }
        }
        if iters >= settings.max_iter {
            break SolveStatus::MaxIter;
        }
        if start.is_some_and(|(t0, lim)| t0.elapsed() >= lim) {
            break SolveStatus::Timeout;
        }

        let proposed = policy.next_params(&bundle, &state)?;
        proposed.validate(m, p)?;
        let eff = block.effective_params(prob, &proposed).map_err(|e| Error::Iteration {
            iteration: state.k,
            source: Box::new(e),
        })?;
        let next = admm_step(prob, &state, &eff, &mut block)?;
        params = Some(eff);
        prev = Some(std::mem::replace(&mut state, next));
    };

    let iterations = state.k - k0;
    let (report_state, relaxed) = match status {
        SolveStatus::MaxIter | SolveStatus::Timeout => {
            let (_, st, metric) = best.expect("initial iterate recorded");
            (st, metric)
        }
        _ => {
            let b = relaxed_residuals(prob, &state, prev.as_ref());
            (state.clone(), b.termination_metric())
        }
    };
    let (_, qp_inf) = prob.qp_residual(&report_state.x, &report_state.y_i, &report_state.y_e)?;
    let mut stats = BTreeMap::new();
    stats.insert("factorizations".to_string(), block.factorizations);
    stats.insert("cg_iterations".to_string(), block.cg_iterations);
    stats.insert("cg_failures".to_string(), block.cg_failures);
    let solution = QpSolution {
        x: report_state.x.clone(),
        y_i: report_state.y_i.clone(),
        y_e: report_state.y_e.clone(),
        z_i: report_state.z_i.clone(),
        z_e: report_state.z_e.clone(),
        status,
        iterations,
        stats,
        qp_residual_inf: qp_inf,
        relaxed_residual_inf: relaxed,
    };
    Ok(SolveReport { solution, trace, state, params })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feasibility {
    FeasibleOriginal,
    InfeasibleOriginal { inequality: Vec<usize>, equality: Vec<usize> },
}

/// Reads the violation certificate: indices whose `|z|` exceeds `eps`.
pub fn classify_feasibility(solution: &QpSolution, eps: f64) -> Feasibility {
    let pick = |z: &[f64]| z.iter().enumerate().filter(|(_, v)| v.abs() > eps).map(|(i, _)| i).collect::<Vec<_>>();
    let inequality = pick(&solution.z_i);
    let equality = pick(&solution.z_e);
    if inequality.is_empty() && equality.is_empty() {
        Feasibility::FeasibleOriginal
    } else {
        Feasibility::InfeasibleOriginal { inequality, equality }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CscMatrix;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[2.0, 0.5, -3.0], &[1.0]).unwrap(), vec![1.0, 0.0, -2.0]);
        let v = [0.3, -7.0, 2.5];
        assert_eq!(soft_threshold(&v, &[0.0]).unwrap(), v.to_vec());
        assert!(soft_threshold(&v, &[-1.0]).is_err());
        assert!(soft_threshold(&v, &[1.0, 2.0]).is_err());
    }

    fn unconstrained() -> QpProblem {
        // min ½x² − x
        QpProblem::new(
            CscMatrix::identity(1),
            vec![-1.0],
            CscMatrix::zeros(0, 1),
            vec![],
            CscMatrix::zeros(0, 1),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn one_step_unconstrained_closed_form() {
        let prob = QpProblem::new(
            CscMatrix::diagonal(&[2.0, 4.0]),
            vec![1.0, -2.0],
            CscMatrix::zeros(0, 2),
            vec![],
            CscMatrix::zeros(0, 2),
            vec![],
        )
        .unwrap();
        let params = SolverParams::uniform(0, 0, &ParamDefaults::default());
        let mut block = BlockSolver::new(&prob, Method::Direct);
        let st = admm_step(&prob, &SolverState::cold(&prob), &params, &mut block).unwrap();
        let sx = 1e-6;
        let want = [1.6 * (-1.0 / (2.0 + sx)), 1.6 * (2.0 / (4.0 + sx))];
        for (a, b) in st.x.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(st.k, 1);
    }

    #[test]
    fn unconstrained_converges_quickly() {
        let (sol, _) = solve(&unconstrained(), &SolveSettings::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!(sol.iterations <= 50);
        assert!((sol.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_time_limit_times_out() {
        let settings = SolveSettings { time_limit: Some(Duration::ZERO), ..Default::default() };
        let (sol, _) = solve(&unconstrained(), &settings, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Timeout);
    }

    #[test]
    fn classify_reports_indices() {
        let sol = QpSolution {
            x: vec![],
            y_i: vec![],
            y_e: vec![],
            z_i: vec![0.0, 0.5, 1e-9],
            z_e: vec![-2.0],
            status: SolveStatus::SolvedInfeasibleOriginal,
            iterations: 0,
            stats: BTreeMap::new(),
            qp_residual_inf: 0.0,
            relaxed_residual_inf: 0.0,
        };
        assert_eq!(
            classify_feasibility(&sol, 1e-6),
            Feasibility::InfeasibleOriginal { inequality: vec![1], equality: vec![0] }
        );
    }
}
