//! Always-feasible convex QP solver.
//!
//! Problems of the form `min ½xᵀPx + qᵀx  s.t. Gx ≤ h, Ax = b` are replaced by
//! their exact ℓ1 elastic relaxation and solved with ADMM, so every instance
//! produces a point; nonzero violation variables at convergence name the
//! constraints that could not be met.

pub mod bench;
pub mod cert;
pub mod error;
pub mod io;
pub mod linsys;
pub mod oracle;
pub mod policy;
pub mod probgen;
pub mod qp;
pub mod solver;
pub mod sqp;
pub mod sparse;

pub use error::{Error, Result};
pub use policy::ParamPolicy;
pub use qp::{Penalty, QpProblem, QpSolution, SolveStatus};
pub use solver::{solve, Method, ParamDefaults, SolveSettings, SolverParams};
pub use sparse::CscMatrix;
