use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::sparse::norm_inf;

/// All ADMM iterates. Fields with a `_t` suffix are the first-block copies
/// (`x̃`, `s̃`, `z̃`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub x_t: Vec<f64>,
    pub s: Vec<f64>,
    pub s_t: Vec<f64>,
    pub z_i: Vec<f64>,
    pub z_i_t: Vec<f64>,
    pub w_s: Vec<f64>,
    pub y_i: Vec<f64>,
    pub z_e: Vec<f64>,
    pub z_e_t: Vec<f64>,
    pub y_e: Vec<f64>,
    pub nu_i: Vec<f64>,
    pub nu_e: Vec<f64>,
    pub k: usize,
}

impl SolverState {
    pub fn zeros(n: usize, m: usize, p: usize) -> Self {
        SolverState {
            x: vec![0.0; n],
            x_t: vec![0.0; n],
            s: vec![0.0; m],
            s_t: vec![0.0; m],
            z_i: vec![0.0; m],
            z_i_t: vec![0.0; m],
            w_s: vec![0.0; m],
            y_i: vec![0.0; m],
            z_e: vec![0.0; p],
            z_e_t: vec![0.0; p],
            y_e: vec![0.0; p],
            nu_i: vec![0.0; m],
            nu_e: vec![0.0; p],
            k: 0,
        }
    }

    /// Zero primal and dual variables with slacks `s⁰ = h₊`.
    pub fn cold(prob: &QpProblem) -> Self {
        let (n, m, p) = prob.dims();
        let mut st = Self::zeros(n, m, p);
        st.s = prob.h().iter().map(|v| v.max(0.0)).collect();
        st.s_t = st.s.clone();
        st
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x.len(), self.s.len(), self.z_e.len())
    }

    pub fn check_dims(&self, prob: &QpProblem) -> Result<()> {
        let (n, m, p) = prob.dims();
        let ok = [&self.x, &self.x_t].iter().all(|v| v.len() == n)
            && [&self.s, &self.s_t, &self.z_i, &self.z_i_t, &self.w_s, &self.y_i, &self.nu_i]
                .iter()
                .all(|v| v.len() == m)
            && [&self.z_e, &self.z_e_t, &self.y_e, &self.nu_e].iter().all(|v| v.len() == p);
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!("solver state does not match problem dimensions ({n}, {m}, {p})")))
        }
    }
}

/// Per-block vectors for the four variable groups `(x, s, z_I, z_E)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockVectors {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub e: Vec<f64>,
}

impl BlockVectors {
    fn diff(a: (&[f64], &[f64], &[f64], &[f64]), b: (&[f64], &[f64], &[f64], &[f64])) -> Self {
        let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p - q).collect();
        BlockVectors { x: d(a.0, b.0), s: d(a.1, b.1), i: d(a.2, b.2), e: d(a.3, b.3) }
    }

    fn zeros(n: usize, m: usize, p: usize) -> Self {
        BlockVectors { x: vec![0.0; n], s: vec![0.0; m], i: vec![0.0; m], e: vec![0.0; p] }
    }

    pub fn norms(&self) -> [f64; 4] {
        [norm_inf(&self.x), norm_inf(&self.s), norm_inf(&self.i), norm_inf(&self.e)]
    }

    pub fn inf_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }
}

/// Relaxed-problem residuals, ADMM residuals, and the original-QP residual norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBundle {
    /// `Px + q + Gᵀy_I + Aᵀy_E`
    pub zeta_dual: Vec<f64>,
    /// `Gx + s − h − z_I`
    pub zeta_i: Vec<f64>,
    /// `Ax − b − z_E`
    pub zeta_e: Vec<f64>,
    /// First-block copy minus second-block iterate.
    pub admm_primal: BlockVectors,
    /// Previous minus current second-block iterate; zero at `k = 0`.
    pub admm_dual: BlockVectors,
    pub qp_residual_inf: f64,
}

impl ResidualBundle {
    pub fn relaxed_inf(&self) -> f64 {
        norm_inf(&self.zeta_dual).max(norm_inf(&self.zeta_i)).max(norm_inf(&self.zeta_e))
    }

    pub fn admm_inf(&self) -> f64 {
        self.admm_primal.inf_norm().max(self.admm_dual.inf_norm())
    }

    /// Quantity compared against `eps_abs` for termination.
    pub fn termination_metric(&self) -> f64 {
        self.relaxed_inf().max(self.admm_inf())
    }

    /// The nine infinity norms fed to the relaxation policy, in order
    /// `(ζ_dual, ζ_I, ζ_E, ζ̄_s, ζ̄_I, ζ̄_E, ζ̃_s, ζ̃_I, ζ̃_E)`.
    pub fn alpha_features(&self) -> [f64; 9] {
        [
            norm_inf(&self.zeta_dual),
            norm_inf(&self.zeta_i),
            norm_inf(&self.zeta_e),
            norm_inf(&self.admm_dual.s),
            norm_inf(&self.admm_dual.i),
            norm_inf(&self.admm_dual.e),
            norm_inf(&self.admm_primal.s),
            norm_inf(&self.admm_primal.i),
            norm_inf(&self.admm_primal.e),
        ]
    }

    pub fn summary(&self, k: usize) -> ResidualSummary {
        ResidualSummary {
            k,
            dual: norm_inf(&self.zeta_dual),
            ineq: norm_inf(&self.zeta_i),
            eq: norm_inf(&self.zeta_e),
            admm_primal: self.admm_primal.norms(),
            admm_dual: self.admm_dual.norms(),
            qp_residual_inf: self.qp_residual_inf,
        }
    }
}

/// Infinity norms of a [`ResidualBundle`], as recorded in solve traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub k: usize,
    pub dual: f64,
    pub ineq: f64,
    pub eq: f64,
    pub admm_primal: [f64; 4],
    pub admm_dual: [f64; 4],
    pub qp_residual_inf: f64,
}

impl ResidualSummary {
    pub fn termination_metric(&self) -> f64 {
        self.admm_primal
            .iter()
            .chain(&self.admm_dual)
            .fold(self.dual.max(self.ineq).max(self.eq), |a, &b| a.max(b))
    }
}

/// Residuals of `state`, with ADMM dual residuals taken against `previous`
/// (zero when there is no previous iterate).
pub fn relaxed_residuals(prob: &QpProblem, state: &SolverState, previous: Option<&SolverState>) -> ResidualBundle {
    let (n, m, p) = prob.dims();
    let zeta_dual = prob.dual_residual(&state.x, &state.y_i, &state.y_e);
    let gx_h = prob.ineq_value(&state.x);
    let ax_b = prob.eq_value(&state.x);
    let zeta_i: Vec<f64> = (0..m).map(|i| gx_h[i] + state.s[i] - state.z_i[i]).collect();
    let zeta_e: Vec<f64> = (0..p).map(|e| ax_b[e] - state.z_e[e]).collect();

    let admm_primal = BlockVectors::diff(
        (&state.x_t, &state.s_t, &state.z_i_t, &state.z_e_t),
        (&state.x, &state.s, &state.z_i, &state.z_e),
    );
    let admm_dual = match previous {
        Some(prev) => BlockVectors::diff(
            (&prev.x, &prev.s, &prev.z_i, &prev.z_e),
            (&state.x, &state.s, &state.z_i, &state.z_e),
        ),
        None => BlockVectors::zeros(n, m, p),
    };

    let qp_residual_inf = norm_inf(&zeta_dual)
        .max(gx_h.iter().fold(0.0, |a, &v| a.max(v)))
        .max(norm_inf(&ax_b));

    ResidualBundle { zeta_dual, zeta_i, zeta_e, admm_primal, admm_dual, qp_residual_inf }
}
