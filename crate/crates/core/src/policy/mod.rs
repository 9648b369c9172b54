//! Parameter schedules queried by the solver before every iteration.

mod nn;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{ParamDefaults, ResidualBundle, SolverParams, SolverState, PARAM_MAX, PARAM_MIN};
use crate::sparse::norm_inf;

pub use nn::{
    evaluate_rows, forward_mlp, golden_max_error, load_golden, load_weights, lstm_step, sigmoid, Activation, Arch,
    DenseLayer, GoldenCase, Head, InputTransform, InputTransforms, LstmCell, LstmState, Network, PolicyWeights,
    WEIGHTS_VERSION,
};

/// Residual-balancing rule for the penalty parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub tau: f64,
    pub ratio_trigger: f64,
    pub adapt_every: usize,
    /// `μ_i` doubles once `|y_i| ≥ mu_trigger · μ_i`.
    pub mu_trigger: f64,
    /// Doubling stops here. Rows that are infeasible in the original problem
    /// saturate at every check, so a finite cap lets them settle.
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    pub initial: ParamDefaults,
}

fn default_mu_max() -> f64 {
    PARAM_MAX
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            tau: 2.0,
            ratio_trigger: 10.0,
            adapt_every: 25,
            mu_trigger: 0.99,
            mu_max: PARAM_MAX,
            initial: ParamDefaults::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::param("adaptive tau must exceed 1"));
        }
        if !(self.ratio_trigger > 1.0) {
            return Err(Error::param("adaptive ratio_trigger must exceed 1"));
        }
        if self.adapt_every == 0 {
            return Err(Error::param("adaptive adapt_every must be at least 1"));
        }
        if !(self.mu_trigger > 0.0 && self.mu_trigger <= 1.0) {
            return Err(Error::param("adaptive mu_trigger must lie in (0, 1]"));
        }
        if !(self.mu_max > 0.0) {
            return Err(Error::param("adaptive mu_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum ParamPolicy {
    /// Scalars broadcast to every constraint.
    Fixed(ParamDefaults),
    /// Explicit per-constraint values; dimensions must match the problem.
    FixedVector(SolverParams),
    Adaptive(AdaptiveConfig),
    /// Learned heads; `σ_x` is not predicted and is taken from `sigma_x`.
    Learned { weights: Arc<PolicyWeights>, sigma_x: f64 },
}

impl ParamPolicy {
    pub fn fixed(params: ParamDefaults) -> Self {
        ParamPolicy::Fixed(params)
    }

    pub fn adaptive() -> Self {
        ParamPolicy::Adaptive(AdaptiveConfig::default())
    }

    pub fn learned(weights: PolicyWeights) -> Self {
        ParamPolicy::Learned { weights: Arc::new(weights), sigma_x: ParamDefaults::default().sigma_x }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamPolicy::Fixed(_) | ParamPolicy::FixedVector(_) => "fixed",
            ParamPolicy::Adaptive(_) => "adaptive",
            ParamPolicy::Learned { .. } => "learned",
        }
    }
}

impl Default for ParamPolicy {
    fn default() -> Self {
        ParamPolicy::Fixed(ParamDefaults::default())
    }
}

/// Per-solve policy state (counters, current penalties, recurrent memory).
#[derive(Debug, Clone)]
pub struct PolicyInstance {
    kind: Instance,
    calls: usize,
}

#[derive(Debug, Clone)]
enum Instance {
    Fixed(SolverParams),
    Adaptive { cfg: AdaptiveConfig, params: SolverParams },
    Learned(LearnedState),
}

#[derive(Debug, Clone)]
struct LearnedState {
    weights: Arc<PolicyWeights>,
    sigma_x: f64,
    transforms: [Vec<InputTransform>; 3],
    h_i: Vec<LstmState>,
    h_e: Vec<LstmState>,
    h_alpha: LstmState,
}

impl PolicyInstance {
    pub fn new(policy: &ParamPolicy, m: usize, p: usize) -> Result<Self> {
        let kind = match policy {
            ParamPolicy::Fixed(d) => {
                let params = SolverParams::uniform(m, p, d);
                params.validate(m, p)?;
                Instance::Fixed(params)
            }
            ParamPolicy::FixedVector(params) => {
                params.validate(m, p)?;
                Instance::Fixed(params.clone())
            }
            ParamPolicy::Adaptive(cfg) => {
                cfg.validate()?;
                let params = SolverParams::uniform(m, p, &cfg.initial);
                params.validate(m, p)?;
                Instance::Adaptive { cfg: *cfg, params }
            }
            ParamPolicy::Learned { weights, sigma_x } => {
                weights.validate()?;
                if !(*sigma_x > 0.0) {
                    return Err(Error::param("learned policy sigma_x must be positive"));
                }
                let zi = LstmState::zeros(weights.pi_i.hidden_size());
                let ze = LstmState::zeros(weights.pi_e.hidden_size());
                Instance::Learned(LearnedState {
                    transforms: Head::ALL.map(|h| weights.transforms(h)),
                    h_i: vec![zi; m],
                    h_e: vec![ze; p],
                    h_alpha: LstmState::zeros(weights.pi_alpha.hidden_size()),
                    weights: Arc::clone(weights),
                    sigma_x: *sigma_x,
                })
            }
        };
        Ok(PolicyInstance { kind, calls: 0 })
    }

    /// Parameters for the next iteration given the current residuals.
    pub fn next_params(&mut self, bundle: &ResidualBundle, state: &SolverState) -> Result<SolverParams> {
        let call = self.calls;
        self.calls += 1;
        match &mut self.kind {
            Instance::Fixed(p) => Ok(p.clone()),
            Instance::Adaptive { cfg, params } => {
                if call > 0 && call % cfg.adapt_every == 0 {
                    adapt(cfg, params, bundle, state);
                }
                Ok(params.clone())
            }
            Instance::Learned(ls) => ls.predict(bundle, state),
        }
    }
}

fn adapt(cfg: &AdaptiveConfig, params: &mut SolverParams, bundle: &ResidualBundle, state: &SolverState) {
    // ADMM primal (x̃ − x) against dual (xᵏ⁻¹ − xᵏ) residuals. The relaxed
    // dual residual is not used: the block-1 solve drives it to ~0 every step.
    let primal = bundle.admm_primal.inf_norm();
    let dual = bundle.admm_dual.inf_norm();
    let scale = if primal > cfg.ratio_trigger * dual {
        Some(cfg.tau)
    } else if dual > cfg.ratio_trigger * primal {
        Some(1.0 / cfg.tau)
    } else {
        None
    };
    if let Some(f) = scale {
        for v in params.rho_i.iter_mut().chain(params.rho_e.iter_mut()).chain(params.sigma_s.iter_mut()) {
            *v *= f;
        }
    }
    for (mu, y) in params.mu_i.iter_mut().zip(&state.y_i).chain(params.mu_e.iter_mut().zip(&state.y_e)) {
        if y.abs() >= cfg.mu_trigger * *mu && *mu < cfg.mu_max {
            *mu = (2.0 * *mu).min(cfg.mu_max);
        }
    }
    params.clamp();
}

impl LearnedState {
    fn run(&self, head: Head, raw: &[f64], hidden: &mut LstmState) -> Result<Vec<f64>> {
        let net = self.weights.network(head);
        let tf = &self.transforms[head as usize];
        let x: Vec<f64> = raw.iter().zip(tf).map(|(u, t)| t.apply(*u)).collect();
        let out = match net.arch {
            Arch::Mlp => net.forward_mlp(&x)?,
            Arch::Lstm => {
                let (out, next) = net.lstm_step(&x, hidden)?;
                *hidden = next;
                out
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Policy { head: head.name().to_string(), msg: "network produced a non-finite output".into() });
        }
        Ok(out)
    }

    fn predict(&mut self, bundle: &ResidualBundle, state: &SolverState) -> Result<SolverParams> {
        let (m, p) = (state.s.len(), state.z_e.len());
        let dual_inf = norm_inf(&bundle.zeta_dual);
        let exp_clamp = |v: f64| v.exp().clamp(PARAM_MIN, PARAM_MAX);

        let mut params = SolverParams {
            mu_i: Vec::with_capacity(m),
            mu_e: Vec::with_capacity(p),
            sigma_x: self.sigma_x,
            sigma_s: Vec::with_capacity(m),
            rho_i: Vec::with_capacity(m),
            rho_e: Vec::with_capacity(p),
            alpha: 1.0,
        };
        for i in 0..m {
            let raw = [
                state.s[i],
                state.z_i[i],
                state.w_s[i],
                state.y_i[i],
                dual_inf,
                bundle.zeta_i[i],
                bundle.admm_dual.s[i],
                bundle.admm_dual.i[i],
                bundle.admm_primal.s[i],
                bundle.admm_primal.i[i],
            ];
            let mut h = std::mem::replace(&mut self.h_i[i], LstmState::zeros(0));
            let out = self.run(Head::Ineq, &raw, &mut h)?;
            self.h_i[i] = h;
            params.mu_i.push(exp_clamp(out[0]));
            params.sigma_s.push(exp_clamp(out[1]));
            params.rho_i.push(exp_clamp(out[2]));
        }
        for e in 0..p {
            let raw = [
                state.z_e[e],
                state.y_e[e],
                dual_inf,
                bundle.zeta_e[e],
                bundle.admm_dual.e[e],
                bundle.admm_primal.e[e],
            ];
            let mut h = std::mem::replace(&mut self.h_e[e], LstmState::zeros(0));
            let out = self.run(Head::Eq, &raw, &mut h)?;
            self.h_e[e] = h;
            params.mu_e.push(exp_clamp(out[0]));
            params.rho_e.push(exp_clamp(out[1]));
        }
        let mut h = std::mem::replace(&mut self.h_alpha, LstmState::zeros(0));
        let out = self.run(Head::Alpha, &bundle.alpha_features(), &mut h)?;
        self.h_alpha = h;
        params.alpha = (2.0 * sigmoid(out[0])).clamp(PARAM_MIN, 2.0 - PARAM_MIN);
        Ok(params)
    }
}
