//! First-block ADMM subproblem: an equality-constrained QP solved either
//! through the reduced quasi-definite KKT system (direct) or the reduced
//! positive-definite system in `x̃` alone (indirect, conjugate gradients).

mod cg;
pub mod ldl;
pub mod ordering;

pub use cg::{conjugate_gradient, CgConfig, CgOutcome, Preconditioner};

use crate::error::Result;
use crate::qp::QpProblem;
use crate::solver::{SolverParams, SolverState};
use crate::sparse::{norm_inf, CscMatrix};

use ldl::{Numeric, Symbolic};

/// Ratio band outside of which a cached factorization is considered stale.
pub const REFACTOR_RATIO: f64 = 5.0;

/// The parameters baked into the KKT matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub sigma_x: f64,
    pub sigma_s: Vec<f64>,
    pub rho_i: Vec<f64>,
    pub rho_e: Vec<f64>,
}

impl From<&SolverParams> for BlockParams {
    fn from(p: &SolverParams) -> Self {
        BlockParams {
            sigma_x: p.sigma_x,
            sigma_s: p.sigma_s.clone(),
            rho_i: p.rho_i.clone(),
            rho_e: p.rho_e.clone(),
        }
    }
}

impl BlockParams {
    /// `(σ_s⁻¹ + ρ_I⁻¹)⁻¹` per inequality.
    pub fn ineq_weight(&self) -> Vec<f64> {
        self.sigma_s
            .iter()
            .zip(&self.rho_i)
            .map(|(s, r)| 1.0 / (1.0 / s + 1.0 / r))
            .collect()
    }
}

/// True when any of `σ_x`, `σ_s`, `ρ_I`, `ρ_E` moved by more than a factor
/// of five relative to the factored values.
pub fn should_refactor(old: &BlockParams, new: &BlockParams) -> bool {
    let out = |a: f64, b: f64| {
        let r = b / a;
        !(1.0 / REFACTOR_RATIO..=REFACTOR_RATIO).contains(&r)
    };
    if out(old.sigma_x, new.sigma_x) {
        return true;
    }
    let pairs = [
        (&old.sigma_s, &new.sigma_s),
        (&old.rho_i, &new.rho_i),
        (&old.rho_e, &new.rho_e),
    ];
    pairs
        .iter()
        .any(|(o, n)| o.len() != n.len() || o.iter().zip(n.iter()).any(|(&a, &b)| out(a, b)))
}

/// Upper triangle of
///
/// ```text
/// [ P + σ_x I   Gᵀ                     Aᵀ        ]
/// [ G           −(σ_s⁻¹ + ρ_I⁻¹) I     0         ]
/// [ A           0                      −ρ_E⁻¹ I  ]
/// ```
///
/// Diagonal entries of the `x` block are always stored, so the pattern does
/// not depend on the parameter values.
pub fn assemble_kkt(prob: &QpProblem, params: &BlockParams) -> CscMatrix {
    let (n, m, p) = prob.dims();
    let mut t = Vec::with_capacity(prob.cost_matrix().nnz() + n + prob.g().nnz() + prob.a().nnz() + m + p);
    t.extend(prob.cost_matrix().triplets());
    for j in 0..n {
        t.push((j, j, params.sigma_x));
    }
    for (i, j, v) in prob.g().triplets() {
        t.push((j, n + i, v));
    }
    for i in 0..m {
        t.push((n + i, n + i, -(1.0 / params.sigma_s[i] + 1.0 / params.rho_i[i])));
    }
    for (e, j, v) in prob.a().triplets() {
        t.push((j, n + m + e, v));
    }
    for e in 0..p {
        t.push((n + m + e, n + m + e, -1.0 / params.rho_e[e]));
    }
    CscMatrix::from_triplets(n + m + p, n + m + p, &t).expect("indices in range")
}

/// Cached symbolic analysis of a problem's KKT pattern.
#[derive(Debug, Clone)]
pub struct KktSystem {
    symbolic: Symbolic,
}

impl KktSystem {
    pub fn analyze(prob: &QpProblem) -> KktSystem {
        let (_, m, p) = prob.dims();
        let unit = BlockParams {
            sigma_x: 1.0,
            sigma_s: vec![1.0; m],
            rho_i: vec![1.0; m],
            rho_e: vec![1.0; p],
        };
        KktSystem { symbolic: Symbolic::analyze(&assemble_kkt(prob, &unit)) }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn factor(&self, prob: &QpProblem, params: &BlockParams) -> Result<KktFactorization> {
        let kkt = assemble_kkt(prob, params);
        let numeric = self.symbolic.factor(&kkt)?;
        Ok(KktFactorization {
            symbolic: self.symbolic.clone(),
            numeric,
            kkt,
            params_snapshot: params.clone(),
        })
    }
}

/// Factorization `Pᵀ L D Lᵀ P` of the assembled KKT matrix.
#[derive(Debug, Clone)]
pub struct KktFactorization {
    symbolic: Symbolic,
    numeric: Numeric,
    kkt: CscMatrix,
    pub params_snapshot: BlockParams,
}

impl KktFactorization {
    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.kkt
    }

    pub fn numeric(&self) -> &Numeric {
        &self.numeric
    }

    pub fn symbolic(&self) -> &Symbolic {
        &self.symbolic
    }

    /// Solves `K sol = rhs`, with one refinement step when the first residual
    /// exceeds `1e-10 (1 + ‖rhs‖∞)`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut sol = self.symbolic.solve(&self.numeric, rhs);
        let mut r = rhs.to_vec();
        let ksol = self.kkt.sym_upper_mul_vec(&sol);
        for (ri, ki) in r.iter_mut().zip(&ksol) {
            *ri -= ki;
        }
        if norm_inf(&r) > 1e-10 * (1.0 + norm_inf(rhs)) {
            let corr = self.symbolic.solve(&self.numeric, &r);
            for (s, c) in sol.iter_mut().zip(corr) {
                *s += c;
            }
        }
        sol
    }
}

/// Output of the first ADMM block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub x: Vec<f64>,
    pub nu_i: Vec<f64>,
    pub nu_e: Vec<f64>,
    pub cg_iterations: usize,
    pub cg_converged: bool,
}

/// Right-hand side blocks `(σ_x xᵏ − q, r_I, r_E)` of the reduced KKT system.
pub fn block_rhs(prob: &QpProblem, params: &BlockParams, state: &SolverState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rx: Vec<f64> = state
        .x
        .iter()
        .zip(prob.q())
        .map(|(x, q)| params.sigma_x * x - q)
        .collect();
    let ri: Vec<f64> = (0..prob.m())
        .map(|i| {
            prob.h()[i] - state.s[i] + state.w_s[i] / params.sigma_s[i] + state.z_i[i]
                - state.y_i[i] / params.rho_i[i]
        })
        .collect();
    let re: Vec<f64> = (0..prob.p_eq())
        .map(|e| prob.b()[e] + state.z_e[e] - state.y_e[e] / params.rho_e[e])
        .collect();
    (rx, ri, re)
}

/// Direct solve of the reduced KKT system for `(x̃, ν̃_I, ν̃_E)`.
pub fn solve_direct(fact: &KktFactorization, prob: &QpProblem, state: &SolverState) -> BlockSolution {
    let (n, m, _) = prob.dims();
    let (mut rhs, ri, re) = block_rhs(prob, &fact.params_snapshot, state);
    rhs.extend(ri);
    rhs.extend(re);
    let sol = fact.solve(&rhs);
    BlockSolution {
        x: sol[..n].to_vec(),
        nu_i: sol[n..n + m].to_vec(),
        nu_e: sol[n + m..].to_vec(),
        cg_iterations: 0,
        cg_converged: true,
    }
}

/// Eliminated first-block variables `(s̃, z̃_I, z̃_E)` from the multipliers.
pub fn recover_block1_direct(
    state: &SolverState,
    params: &BlockParams,
    nu_i: &[f64],
    nu_e: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = nu_i.len();
    let s: Vec<f64> = (0..m)
        .map(|i| state.s[i] - state.w_s[i] / params.sigma_s[i] - nu_i[i] / params.sigma_s[i])
        .collect();
    let zi: Vec<f64> = (0..m)
        .map(|i| state.z_i[i] - state.y_i[i] / params.rho_i[i] + nu_i[i] / params.rho_i[i])
        .collect();
    let ze: Vec<f64> = (0..nu_e.len())
        .map(|e| state.z_e[e] - state.y_e[e] / params.rho_e[e] + nu_e[e] / params.rho_e[e])
        .collect();
    (s, zi, ze)
}

/// Matrix-free reduced operator `P + σ_x I + ḠᵀG + ĀᵀA`.
pub struct ReducedOperator<'a> {
    prob: &'a QpProblem,
    sigma_x: f64,
    d_i: Vec<f64>,
    rho_e: &'a [f64],
}

impl<'a> ReducedOperator<'a> {
    pub fn new(prob: &'a QpProblem, params: &'a BlockParams) -> Self {
        ReducedOperator {
            prob,
            sigma_x: params.sigma_x,
            d_i: params.ineq_weight(),
            rho_e: &params.rho_e,
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.sigma_x * vi;
        }
        self.prob.cost_matrix().sym_upper_mul_add(v, out);
        if self.prob.m() > 0 {
            let mut gv = self.prob.g().mul_vec(v);
            for (g, d) in gv.iter_mut().zip(&self.d_i) {
                *g *= d;
            }
            self.prob.g().tr_mul_add(&gv, out);
        }
        if self.prob.p_eq() > 0 {
            let mut av = self.prob.a().mul_vec(v);
            for (a, r) in av.iter_mut().zip(self.rho_e) {
                *a *= r;
            }
            self.prob.a().tr_mul_add(&av, out);
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.prob.n();
        let mut d = vec![self.sigma_x; n];
        for (i, j, v) in self.prob.cost_matrix().triplets() {
            if i == j {
                d[j] += v;
            }
        }
        for (i, j, v) in self.prob.g().triplets() {
            d[j] += self.d_i[i] * v * v;
        }
        for (e, j, v) in self.prob.a().triplets() {
            d[j] += self.rho_e[e] * v * v;
        }
        d
    }
}

/// Indirect first-block solve: conjugate gradients on the reduced system,
/// warm-started from `warm` (typically the previous `x̃`), followed by
/// multiplier recovery.
pub fn solve_indirect(
    prob: &QpProblem,
    params: &BlockParams,
    state: &SolverState,
    cfg: &CgConfig,
    warm: &[f64],
) -> Result<BlockSolution> {
    let (rx, ri, re) = block_rhs(prob, params, state);
    let d_i = params.ineq_weight();
    let mut rhs = rx;
    let wi: Vec<f64> = ri.iter().zip(&d_i).map(|(r, d)| r * d).collect();
    prob.g().tr_mul_add(&wi, &mut rhs);
    let we: Vec<f64> = re.iter().zip(&params.rho_e).map(|(r, p)| r * p).collect();
    prob.a().tr_mul_add(&we, &mut rhs);

    let op = ReducedOperator::new(prob, params);
    let outcome = conjugate_gradient(|v, out| op.apply(v, out), &rhs, warm, cfg, || op.diagonal())?;
    let x = outcome.x;

    let gx = prob.g().mul_vec(&x);
    let nu_i: Vec<f64> = (0..prob.m()).map(|i| d_i[i] * (gx[i] - ri[i])).collect();
    let ax = prob.a().mul_vec(&x);
    let nu_e: Vec<f64> = (0..prob.p_eq()).map(|e| params.rho_e[e] * (ax[e] - re[e])).collect();
    Ok(BlockSolution {
        x,
        nu_i,
        nu_e,
        cg_iterations: outcome.iterations,
        cg_converged: outcome.converged,
    })
}
