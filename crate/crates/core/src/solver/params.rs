use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAM_MIN: f64 = 1e-6;
pub const PARAM_MAX: f64 = 1e6;

/// Per-constraint algorithm parameters for one ADMM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Elastic penalties on inequality violations.
    pub mu_i: Vec<f64>,
    /// Elastic penalties on equality violations.
    pub mu_e: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_s: Vec<f64>,
    pub rho_i: Vec<f64>,
    pub rho_e: Vec<f64>,
    /// Over-relaxation, strictly inside (0, 2).
    pub alpha: f64,
}

/// Scalar parameter values broadcast to every constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDefaults {
    pub mu_i: f64,
    pub mu_e: f64,
    pub sigma_x: f64,
    pub sigma_s: f64,
    pub rho_i: f64,
    pub rho_e: f64,
    pub alpha: f64,
}

impl Default for ParamDefaults {
    fn default() -> Self {
        ParamDefaults {
            mu_i: 1e3,
            mu_e: 1e3,
            sigma_x: 1e-6,
            sigma_s: 1e-1,
            rho_i: 1e-1,
            rho_e: 1e-1,
            alpha: 1.6,
        }
    }
}

impl ParamDefaults {
    pub fn with_mu(self, mu: f64) -> Self {
        ParamDefaults { mu_i: mu, mu_e: mu, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        ParamDefaults { alpha, ..self }
    }
}

impl SolverParams {
    pub fn uniform(m: usize, p: usize, d: &ParamDefaults) -> Self {
        SolverParams {
            mu_i: vec![d.mu_i; m],
            mu_e: vec![d.mu_e; p],
            sigma_x: d.sigma_x,
            sigma_s: vec![d.sigma_s; m],
            rho_i: vec![d.rho_i; m],
            rho_e: vec![d.rho_e; p],
            alpha: d.alpha,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mu_i.len(), self.mu_e.len())
    }

    /// Clamps every penalty into `[1e-6, 1e6]`; `alpha` is left untouched.
    pub fn clamp(&mut self) {
        let c = |v: &mut f64| *v = v.clamp(PARAM_MIN, PARAM_MAX);
        c(&mut self.sigma_x);
        for v in self
            .mu_i
            .iter_mut()
            .chain(self.mu_e.iter_mut())
            .chain(self.sigma_s.iter_mut())
            .chain(self.rho_i.iter_mut())
            .chain(self.rho_e.iter_mut())
        {
            c(v);
        }
    }

    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        if self.mu_i.len() != m || self.sigma_s.len() != m || self.rho_i.len() != m {
            return Err(Error::dim(format!("inequality parameters must have length {m}")));
        }
        if self.mu_e.len() != p || self.rho_e.len() != p {
            return Err(Error::dim(format!("equality parameters must have length {p}")));
        }
        let all_pos = std::iter::once(&self.sigma_x)
            .chain(&self.mu_i)
            .chain(&self.mu_e)
            .chain(&self.sigma_s)
            .chain(&self.rho_i)
            .chain(&self.rho_e)
            .all(|&v| v > 0.0 && v.is_finite());
        if !all_pos {
            return Err(Error::param("penalty parameters must be positive and finite"));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::param(format!("alpha = {} outside (0, 2)", self.alpha)));
        }
        Ok(())
    }
}
