//! Browser bindings. Every export takes and returns JSON strings; failures
//! come back as `{"error": "..."}`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use flexqp::solver::{classify_feasibility, solve_observed, Feasibility};
use flexqp::sqp::{sqp_solve, Obstacle, OcpNlp, OcpSpec, SqpSettings, SqpStatus};
use flexqp::{CscMatrix, ParamDefaults, ParamPolicy, QpProblem, SolveSettings, SolveStatus};

#[derive(Debug, Deserialize)]
pub struct HalfPlane {
    pub a: [f64; 2],
    pub b: f64,
}

#[derive(Debug, Deserialize)]
pub struct PlaneInput {
    pub target: [f64; 2],
    pub constraints: Vec<HalfPlane>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_mu() -> f64 {
    ParamDefaults::default().mu_i
}

fn default_max_iter() -> usize {
    2000
}

#[derive(Debug, Serialize)]
pub struct PlaneOutput {
    pub status: SolveStatus,
    pub iterations: usize,
    pub x: [f64; 2],
    pub path: Vec<[f64; 2]>,
    pub violated: Vec<usize>,
    pub z: Vec<f64>,
}

/// Projects `target` onto `{x : aᵢᵀx ≤ bᵢ}` in its elastic form, recording
/// every iterate.
pub fn plane_projection(input: &PlaneInput) -> flexqp::Result<PlaneOutput> {
    let m = input.constraints.len();
    let trips: Vec<_> =
        input.constraints.iter().enumerate().flat_map(|(i, c)| [(i, 0, c.a[0]), (i, 1, c.a[1])]).collect();
    let g = CscMatrix::from_triplets(m, 2, &trips)?;
    let h = input.constraints.iter().map(|c| c.b).collect();
    let q = vec![-input.target[0], -input.target[1]];
    let prob = QpProblem::new(CscMatrix::identity(2), q, g, h, CscMatrix::zeros(0, 2), vec![])?;
    let settings = SolveSettings {
        eps_abs: 1e-6,
        max_iter: input.max_iter,
        policy: ParamPolicy::fixed(ParamDefaults { mu_i: input.mu, ..ParamDefaults::default() }),
        ..SolveSettings::default()
    };
    let mut path = Vec::new();
    let report = solve_observed(&prob, &settings, None, |v| path.push([v.state.x[0], v.state.x[1]]))?;
    let sol = report.solution;
    let violated = match classify_feasibility(&sol, settings.eps_abs) {
        Feasibility::FeasibleOriginal => vec![],
        Feasibility::InfeasibleOriginal { inequality, .. } => inequality,
    };
    Ok(PlaneOutput { status: sol.status, iterations: sol.iterations, x: [sol.x[0], sol.x[1]], path, violated, z: sol.z_i })
}

#[derive(Debug, Serialize)]
pub struct PenaltyProfile {
    pub xs: Vec<f64>,
    /// `½(x − t)² + μ·max(x − c, 0)`
    pub elastic: Vec<f64>,
    /// `½(x − t)²` where `x ≤ c`, absent elsewhere.
    pub hard: Vec<Option<f64>>,
    pub minimizer: f64,
    /// Minimizer found by the solver on the same problem.
    pub solver_minimizer: f64,
    pub status: SolveStatus,
}

/// Scalar `min ½(x − t)² s.t. x ≤ c` under an ℓ1 penalty of weight `mu`.
/// Once `mu` exceeds the constraint's multiplier `t − c` the elastic
/// minimizer snaps onto the hard one.
pub fn penalty_profile(target: f64, bound: f64, mu: f64, samples: usize) -> flexqp::Result<PenaltyProfile> {
    if !(mu > 0.0) || samples < 2 {
        return Err(flexqp::Error::Parameter("mu must be positive and samples at least 2".into()));
    }
    let lo = target.min(bound) - 2.0;
    let hi = target.max(bound) + 2.0;
    let xs: Vec<f64> = (0..samples).map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64).collect();
    let f = |x: f64| 0.5 * (x - target).powi(2);
    let elastic = xs.iter().map(|&x| f(x) + mu * (x - bound).max(0.0)).collect();
    let hard = xs.iter().map(|&x| (x <= bound).then(|| f(x))).collect();
    let minimizer = if target <= bound { target } else { bound.max(target - mu) };
    let out = plane_projection(&PlaneInput {
        target: [target, 0.0],
        constraints: vec![HalfPlane { a: [1.0, 0.0], b: bound }],
        mu,
        max_iter: 4000,
    })?;
    Ok(PenaltyProfile { xs, elastic, hard, minimizer, solver_minimizer: out.x[0], status: out.status })
}

#[derive(Debug, Serialize)]
pub struct CarOutput {
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    pub states: Vec<Vec<f64>>,
    pub status: SqpStatus,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Random car-with-obstacles task, solved by SQP. `horizon` rescales the
/// time step so the total duration stays fixed.
pub fn car_trajectory(seed: u64, horizon: usize) -> flexqp::Result<CarOutput> {
    let mut spec = OcpSpec::random_dubins(seed)?;
    if horizon > 0 {
        spec.dt *= spec.horizon as f64 / horizon as f64;
        spec.horizon = horizon;
    }
    let nlp = OcpNlp::new(spec.clone())?;
    let mut settings = SqpSettings::default();
    settings.qp.time_limit = None;
    let res = sqp_solve(&nlp, &settings)?;
    Ok(CarOutput {
        x0: spec.x0,
        target: spec.x_target,
        obstacles: spec.obstacles,
        states: nlp.trajectory(&res.x).states,
        status: res.status,
        iterations: res.iterations,
        residuals: res.history.iter().map(|h| h.residual).collect(),
    })
}

fn respond<T: Serialize>(r: flexqp::Result<T>) -> String {
    let v = match r {
        Ok(v) => serde_json::to_value(v),
        Err(e) => Ok(serde_json::json!({ "error": e.to_string() })),
    };
    v.map(|v| v.to_string()).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

#[wasm_bindgen(js_name = solvePlane)]
pub fn solve_plane(input: &str) -> String {
    match serde_json::from_str::<PlaneInput>(input) {
        Ok(i) => respond(plane_projection(&i)),
        Err(e) => respond::<()>(Err(e.into())),
    }
}

#[wasm_bindgen(js_name = penaltyProfile)]
pub fn penalty_profile_js(target: f64, bound: f64, mu: f64, samples: usize) -> String {
    respond(penalty_profile(target, bound, mu, samples))
}

#[wasm_bindgen(js_name = carTrajectory)]
pub fn car_trajectory_js(seed: u32, horizon: usize) -> String {
    respond(car_trajectory(seed as u64, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_a_corner() {
        let out = plane_projection(&PlaneInput {
            target: [2.0, 3.0],
            constraints: vec![HalfPlane { a: [1.0, 0.0], b: 1.0 }, HalfPlane { a: [0.0, 1.0], b: 1.0 }],
            mu: 1e3,
            max_iter: 4000,
        })
        .unwrap();
        assert_eq!(out.status, SolveStatus::Solved);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{:?}", out.x);
        assert_eq!(out.path.len(), out.iterations + 1);
        assert_eq!(out.path[0], [0.0, 0.0]);
    }

    #[test]
    fn contradictory_planes_are_reported() {
        let out = plane_projection(&PlaneInput {
            target: [0.0, 0.0],
            constraints: vec![HalfPlane { a: [1.0, 0.0], b: -1.0 }, HalfPlane { a: [-1.0, 0.0], b: -1.0 }],
            mu: 10.0,
            max_iter: 20000,
        })
        .unwrap();
        assert_eq!(out.status, SolveStatus::SolvedInfeasibleOriginal);
        assert!(!out.violated.is_empty());
    }

    #[test]
    fn penalty_profile_matches_closed_form() {
        for mu in [0.5, 1.0, 3.0] {
            let p = penalty_profile(2.0, 0.0, mu, 50).unwrap();
            assert!((p.solver_minimizer - p.minimizer).abs() < 1e-4, "mu={mu}: {p:?}");
        }
        let p = penalty_profile(2.0, 0.0, 3.0, 50).unwrap();
        assert_eq!(p.minimizer, 0.0);
        assert!(p.hard.last().unwrap().is_none());
    }

    #[test]
    fn bad_json_is_an_error_object() {
        let v: serde_json::Value = serde_json::from_str(&solve_plane("{")).unwrap();
        assert!(v["error"].is_string());
    }

    #[test]
    fn short_car_trajectory() {
        let out = car_trajectory(3, 20).unwrap();
        assert_eq!(out.states.len(), 21);
        assert!(out.states[0].iter().zip(&out.x0).all(|(a, b)| (a - b).abs() < 1e-3));
        assert!(!out.residuals.is_empty());
    }
}
