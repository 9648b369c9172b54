//! Trajectory-optimization NLPs over the stacked variable
//! `(x_0, …, x_T, u_0, …, u_{T−1})`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dynamics::{euler_step, Dubins, Dynamics, Quadrotor};
use super::{HessianMode, Nlp};
use crate::error::{Error, Result};
use crate::probgen::SplitMix64;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Dubins,
    Quadrotor,
}

impl DynamicsKind {
    pub fn model(self) -> Box<dyn Dynamics + Send + Sync> {
        match self {
            DynamicsKind::Dubins => Box::new(Dubins),
            DynamicsKind::Quadrotor => Box::new(Quadrotor::default()),
        }
    }
}

/// Disc in the `(p_x, p_y)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn contains(&self, p: &[f64]) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSpec {
    pub dynamics: DynamicsKind,
    pub horizon: usize,
    pub dt: f64,
    /// Diagonals of `Q`, `R`, `Q_T`; stage cost `(x − x_target)ᵀQ(x − x_target) + uᵀRu`.
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub qt_diag: Vec<f64>,
    pub x0: Vec<f64>,
    pub x_target: Vec<f64>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyFilterSpec {
    pub dynamics: DynamicsKind,
    pub horizon: usize,
    pub dt: f64,
    pub beta: f64,
    pub x0: Vec<f64>,
    /// Barrier `h(x) = ‖p − c‖² − r²`.
    pub obstacle: Obstacle,
    /// One row per stage.
    pub u_ref: Vec<Vec<f64>>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// `false` keeps only the barrier rows as inequalities.
    #[serde(default = "yes")]
    pub control_bounds: bool,
}

fn yes() -> bool {
    true
}

fn check_len(what: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(Error::dim(format!("{what} has length {}, expected {want}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn check_bounds(lo: &[f64], hi: &[f64], nu: usize) -> Result<()> {
    check_len("u_lower", lo, nu)?;
    check_len("u_upper", hi, nu)?;
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(Error::param("u_lower exceeds u_upper"));
    }
    Ok(())
}

fn check_horizon(horizon: usize, dt: f64) -> Result<()> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

fn sample_state(rng: &mut SplitMix64, bx: &[f64]) -> Vec<f64> {
    bx.iter().map(|b| rng.uniform_in(-b, *b)).collect()
}

const MAX_OBSTACLE_DRAWS: usize = 1000;

impl OcpSpec {
    pub fn validate(&self) -> Result<()> {
        let model = self.dynamics.model();
        let (nx, nu) = (model.nx(), model.nu());
        check_horizon(self.horizon, self.dt)?;
        check_len("q_diag", &self.q_diag, nx)?;
        check_len("qt_diag", &self.qt_diag, nx)?;
        check_len("r_diag", &self.r_diag, nu)?;
        check_len("x0", &self.x0, nx)?;
        check_len("x_target", &self.x_target, nx)?;
        check_bounds(&self.u_lower, &self.u_upper, nu)?;
        if self.q_diag.iter().chain(&self.r_diag).chain(&self.qt_diag).any(|v| *v < 0.0) {
            return Err(Error::param("cost weights must be nonnegative"));
        }
        for o in &self.obstacles {
            if !(o.radius > 0.0) || o.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::param(format!("invalid obstacle {o:?}")));
            }
        }
        Ok(())
    }

    /// Car with five obstacles placed between a random start and target.
    /// Obstacles that would contain the start or target are redrawn.
    pub fn random_dubins(seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let bx = Dubins.sample_box();
        let x0 = sample_state(&mut rng, &bx);
        let x_target = sample_state(&mut rng, &bx);
        let d = (x_target[0] - x0[0]).hypot(x_target[1] - x0[1]);
        let mut obstacles = Vec::with_capacity(5);
        let mut draws = 0;
        while obstacles.len() < 5 {
            draws += 1;
            if draws > MAX_OBSTACLE_DRAWS {
                return Err(Error::Generator(format!("seed {seed}: could not place obstacles")));
            }
            let center = [
                rng.uniform_in(x0[0].min(x_target[0]), x0[0].max(x_target[0])),
                rng.uniform_in(x0[1].min(x_target[1]), x0[1].max(x_target[1])),
            ];
            let radius = rng.uniform_in(0.01 * d, 0.2 * d);
            let o = Obstacle { center, radius };
            if radius > 0.0 && !o.contains(&x0) && !o.contains(&x_target) {
                obstacles.push(o);
            }
        }
        let q = vec![1.0, 1.0, 0.1];
        Ok(OcpSpec {
            dynamics: DynamicsKind::Dubins,
            horizon: 50,
            dt: 0.033,
            qt_diag: q.iter().map(|v| 100.0 * v).collect(),
            q_diag: q,
            r_diag: vec![0.1, 0.1],
            x0,
            x_target,
            obstacles,
            u_lower: vec![-10.0, -5.0],
            u_upper: vec![10.0, 5.0],
        })
    }

    pub fn random_quadrotor(seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let bx = Quadrotor::default().sample_box();
        let x0 = sample_state(&mut rng, &bx);
        let x_target = sample_state(&mut rng, &bx);
        let q = vec![1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1];
        Ok(OcpSpec {
            dynamics: DynamicsKind::Quadrotor,
            horizon: 50,
            dt: 0.05,
            qt_diag: q.iter().map(|v| 1000.0 * v).collect(),
            q_diag: q,
            r_diag: vec![0.01; 4],
            x0,
            x_target,
            obstacles: vec![],
            u_lower: vec![0.0, -10.0, -10.0, -10.0],
            u_upper: vec![20.0, 10.0, 10.0, 10.0],
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }
}

impl SafetyFilterSpec {
    pub fn validate(&self) -> Result<()> {
        let model = self.dynamics.model();
        let (nx, nu) = (model.nx(), model.nu());
        check_horizon(self.horizon, self.dt)?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        check_len("x0", &self.x0, nx)?;
        if nx < 2 {
            return Err(Error::param("barrier needs planar position states"));
        }
        check_bounds(&self.u_lower, &self.u_upper, nu)?;
        if self.u_ref.len() != self.horizon {
            return Err(Error::dim(format!("u_ref has {} rows, expected {}", self.u_ref.len(), self.horizon)));
        }
        for row in &self.u_ref {
            check_len("u_ref row", row, nu)?;
        }
        if !(self.obstacle.radius > 0.0) {
            return Err(Error::param("obstacle radius must be positive"));
        }
        Ok(())
    }

    /// Car scenario with one obstacle between start and target. The reference
    /// is a saturated go-to-goal feedback law rolled out from the start, which
    /// ignores the obstacle.
    pub fn random_dubins(seed: u64, control_bounds: bool) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let bx = Dubins.sample_box();
        let x0 = sample_state(&mut rng, &bx);
        let target = sample_state(&mut rng, &bx);
        let span = (target[0] - x0[0]).abs().max((target[1] - x0[1]).abs());
        let center = [
            rng.uniform_in(x0[0].min(target[0]), x0[0].max(target[0])),
            rng.uniform_in(x0[1].min(target[1]), x0[1].max(target[1])),
        ];
        let radius = (rng.uniform_in(0.01, 2.0) * span).max(1e-3);
        let (horizon, dt) = (50, 0.05);
        let (u_lower, u_upper) = (vec![-10.0, -5.0], vec![10.0, 5.0]);
        let mut u_ref = Vec::with_capacity(horizon);
        let mut x = x0.clone();
        for _ in 0..horizon {
            let (dx, dy) = (target[0] - x[0], target[1] - x[1]);
            let heading = dy.atan2(dx) - x[2];
            let heading = heading.sin().atan2(heading.cos());
            let v = (2.0 * dx.hypot(dy) * heading.cos()).clamp(u_lower[0], u_upper[0]);
            let w = (4.0 * heading).clamp(u_lower[1], u_upper[1]);
            let u = vec![v, w];
            x = euler_step(&Dubins, &x, &u, dt);
            u_ref.push(u);
        }
        Ok(SafetyFilterSpec {
            dynamics: DynamicsKind::Dubins,
            horizon,
            dt,
            beta: 0.1,
            x0,
            obstacle: Obstacle { center, radius },
            u_ref,
            u_lower,
            u_upper,
            control_bounds,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }
}

/// States and controls unpacked from a stacked vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpTrajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

/// Shared pieces: Euler dynamics equalities and box control bounds.
struct Shooting {
    model: Box<dyn Dynamics + Send + Sync>,
    nx: usize,
    nu: usize,
    horizon: usize,
    dt: f64,
    x0: Vec<f64>,
}

impl Shooting {
    fn new(kind: DynamicsKind, horizon: usize, dt: f64, x0: &[f64]) -> Self {
        let model = kind.model();
        Shooting { nx: model.nx(), nu: model.nu(), model, horizon, dt, x0: x0.to_vec() }
    }

    fn n(&self) -> usize {
        (self.horizon + 1) * self.nx + self.horizon * self.nu
    }

    fn xi(&self, t: usize) -> usize {
        t * self.nx
    }

    fn ui(&self, t: usize) -> usize {
        (self.horizon + 1) * self.nx + t * self.nu
    }

    fn state<'a>(&self, z: &'a [f64], t: usize) -> &'a [f64] {
        &z[self.xi(t)..self.xi(t) + self.nx]
    }

    fn control<'a>(&self, z: &'a [f64], t: usize) -> &'a [f64] {
        &z[self.ui(t)..self.ui(t) + self.nu]
    }

    fn p(&self) -> usize {
        (self.horizon + 1) * self.nx
    }

    fn eq(&self, z: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.state(z, 0).iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        for t in 0..self.horizon {
            let next = euler_step(self.model.as_ref(), self.state(z, t), self.control(z, t), self.dt);
            r.extend(self.state(z, t + 1).iter().zip(&next).map(|(a, b)| a - b));
        }
        r
    }

    fn eq_jacobian(&self, z: &[f64]) -> CscMatrix {
        let (nx, nu, dt) = (self.nx, self.nu, self.dt);
        let mut t3 = Vec::new();
        for i in 0..nx {
            t3.push((i, i, 1.0));
        }
        for t in 0..self.horizon {
            let row = (t + 1) * nx;
            let (a, b) = self.model.jacobians(self.state(z, t), self.control(z, t));
            for i in 0..nx {
                t3.push((row + i, self.xi(t + 1) + i, 1.0));
                t3.push((row + i, self.xi(t) + i, -1.0));
                for j in 0..nx {
                    let v = a[i * nx + j];
                    if v != 0.0 {
                        t3.push((row + i, self.xi(t) + j, -dt * v));
                    }
                }
                for j in 0..nu {
                    let v = b[i * nu + j];
                    if v != 0.0 {
                        t3.push((row + i, self.ui(t) + j, -dt * v));
                    }
                }
            }
        }
        CscMatrix::from_triplets(self.p(), self.n(), &t3).expect("indices in range")
    }

    /// Adds the dynamics curvature `Σ y·∇²(−dt f)` when the model provides it.
    fn add_dynamics_hessian(&self, z: &[f64], y_e: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        let k = self.nx + self.nu;
        for t in 0..self.horizon {
            let lam = &y_e[(t + 1) * self.nx..(t + 2) * self.nx];
            if lam.iter().all(|v| *v == 0.0) {
                continue;
            }
            let Some(h) = self.model.weighted_hessian(self.state(z, t), self.control(z, t), lam) else {
                return;
            };
            let idx = |a: usize| if a < self.nx { self.xi(t) + a } else { self.ui(t) + a - self.nx };
            for a in 0..k {
                for b in 0..k {
                    let v = h[a * k + b];
                    let (ga, gb) = (idx(a), idx(b));
                    if v != 0.0 && ga <= gb {
                        out.push((ga, gb, -self.dt * v));
                    }
                }
            }
        }
    }

    fn bound_count(&self) -> usize {
        2 * self.nu * self.horizon
    }

    /// `u − u_hi ≤ 0` then `u_lo − u ≤ 0`, stage by stage.
    fn bounds(&self, z: &[f64], lo: &[f64], hi: &[f64], out: &mut Vec<f64>) {
        for t in 0..self.horizon {
            let u = self.control(z, t);
            out.extend(u.iter().zip(hi).map(|(u, h)| u - h));
            out.extend(u.iter().zip(lo).map(|(u, l)| l - u));
        }
    }

    fn bounds_jacobian(&self, row0: usize, out: &mut Vec<(usize, usize, f64)>) {
        for t in 0..self.horizon {
            let r = row0 + 2 * self.nu * t;
            for j in 0..self.nu {
                out.push((r + j, self.ui(t) + j, 1.0));
                out.push((r + self.nu + j, self.ui(t) + j, -1.0));
            }
        }
    }

    fn rollout(&self, controls: &[Vec<f64>]) -> Vec<f64> {
        let mut z = vec![0.0; self.n()];
        let mut x = self.x0.clone();
        z[..self.nx].copy_from_slice(&x);
        for (t, u) in controls.iter().enumerate() {
            x = euler_step(self.model.as_ref(), &x, u, self.dt);
            z[self.xi(t + 1)..self.xi(t + 1) + self.nx].copy_from_slice(&x);
            z[self.ui(t)..self.ui(t) + self.nu].copy_from_slice(u);
        }
        z
    }

    fn trajectory(&self, z: &[f64]) -> SqpTrajectory {
        SqpTrajectory {
            states: (0..=self.horizon).map(|t| self.state(z, t).to_vec()).collect(),
            controls: (0..self.horizon).map(|t| self.control(z, t).to_vec()).collect(),
        }
    }
}

pub struct OcpNlp {
    spec: OcpSpec,
    shoot: Shooting,
    pub hessian_mode: HessianMode,
}

impl OcpNlp {
    pub fn new(spec: OcpSpec) -> Result<Self> {
        spec.validate()?;
        let shoot = Shooting::new(spec.dynamics, spec.horizon, spec.dt, &spec.x0);
        Ok(OcpNlp { spec, shoot, hessian_mode: HessianMode::GaussNewton })
    }

    pub fn with_hessian(mut self, mode: HessianMode) -> Self {
        self.hessian_mode = mode;
        self
    }

    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }

    pub fn trajectory(&self, z: &[f64]) -> SqpTrajectory {
        self.shoot.trajectory(z)
    }

    fn weight(&self, t: usize) -> &[f64] {
        if t == self.spec.horizon {
            &self.spec.qt_diag
        } else {
            &self.spec.q_diag
        }
    }

    fn obstacle_rows(&self) -> usize {
        self.spec.obstacles.len() * (self.spec.horizon + 1)
    }
}

impl Nlp for OcpNlp {
    fn dims(&self) -> (usize, usize, usize) {
        (self.shoot.n(), self.obstacle_rows() + self.shoot.bound_count(), self.shoot.p())
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let s = &self.shoot;
        let mut f = 0.0;
        for t in 0..=s.horizon {
            let x = s.state(z, t);
            f += self.weight(t).iter().zip(x).zip(&self.spec.x_target).map(|((w, a), b)| w * (a - b).powi(2)).sum::<f64>();
        }
        for t in 0..s.horizon {
            f += self.spec.r_diag.iter().zip(s.control(z, t)).map(|(w, u)| w * u * u).sum::<f64>();
        }
        f
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.shoot;
        let mut g = vec![0.0; s.n()];
        for t in 0..=s.horizon {
            let x = s.state(z, t);
            for i in 0..s.nx {
                g[s.xi(t) + i] = 2.0 * self.weight(t)[i] * (x[i] - self.spec.x_target[i]);
            }
        }
        for t in 0..s.horizon {
            for (j, u) in s.control(z, t).iter().enumerate() {
                g[s.ui(t) + j] = 2.0 * self.spec.r_diag[j] * u;
            }
        }
        g
    }

    fn ineq(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.shoot;
        let mut r = Vec::with_capacity(self.dims().1);
        for o in &self.spec.obstacles {
            for t in 0..=s.horizon {
                let x = s.state(z, t);
                r.push(o.radius * o.radius - (x[0] - o.center[0]).powi(2) - (x[1] - o.center[1]).powi(2));
            }
        }
        s.bounds(z, &self.spec.u_lower, &self.spec.u_upper, &mut r);
        r
    }

    fn ineq_jacobian(&self, z: &[f64]) -> CscMatrix {
        let s = &self.shoot;
        let mut t3 = Vec::new();
        let mut row = 0;
        for o in &self.spec.obstacles {
            for t in 0..=s.horizon {
                let x = s.state(z, t);
                t3.push((row, s.xi(t), -2.0 * (x[0] - o.center[0])));
                t3.push((row, s.xi(t) + 1, -2.0 * (x[1] - o.center[1])));
                row += 1;
            }
        }
        s.bounds_jacobian(row, &mut t3);
        let (n, m, _) = self.dims();
        CscMatrix::from_triplets(m, n, &t3).expect("indices in range")
    }

    fn eq(&self, z: &[f64]) -> Vec<f64> {
        self.shoot.eq(z)
    }

    fn eq_jacobian(&self, z: &[f64]) -> CscMatrix {
        self.shoot.eq_jacobian(z)
    }

    fn hessian(&self, z: &[f64], y_i: &[f64], y_e: &[f64]) -> CscMatrix {
        let s = &self.shoot;
        let mut t3 = Vec::new();
        for t in 0..=s.horizon {
            for i in 0..s.nx {
                t3.push((s.xi(t) + i, s.xi(t) + i, 2.0 * self.weight(t)[i]));
            }
        }
        for t in 0..s.horizon {
            for j in 0..s.nu {
                t3.push((s.ui(t) + j, s.ui(t) + j, 2.0 * self.spec.r_diag[j]));
            }
        }
        if self.hessian_mode == HessianMode::Exact {
            for (o_idx, _) in self.spec.obstacles.iter().enumerate() {
                for t in 0..=s.horizon {
                    let y = y_i[o_idx * (s.horizon + 1) + t];
                    t3.push((s.xi(t), s.xi(t), -2.0 * y));
                    t3.push((s.xi(t) + 1, s.xi(t) + 1, -2.0 * y));
                }
            }
            s.add_dynamics_hessian(z, y_e, &mut t3);
        }
        CscMatrix::from_triplets(s.n(), s.n(), &t3).expect("indices in range")
    }

    /// Rollout of the rest input from `x0`.
    fn initial_guess(&self) -> Vec<f64> {
        let u = self.shoot.model.rest_input();
        self.shoot.rollout(&vec![u; self.spec.horizon])
    }
}

pub struct SafetyFilterNlp {
    spec: SafetyFilterSpec,
    shoot: Shooting,
    pub hessian_mode: HessianMode,
}

impl SafetyFilterNlp {
    pub fn new(spec: SafetyFilterSpec) -> Result<Self> {
        spec.validate()?;
        let shoot = Shooting::new(spec.dynamics, spec.horizon, spec.dt, &spec.x0);
        Ok(SafetyFilterNlp { spec, shoot, hessian_mode: HessianMode::GaussNewton })
    }

    pub fn with_hessian(mut self, mode: HessianMode) -> Self {
        self.hessian_mode = mode;
        self
    }

    pub fn spec(&self) -> &SafetyFilterSpec {
        &self.spec
    }

    pub fn trajectory(&self, z: &[f64]) -> SqpTrajectory {
        self.shoot.trajectory(z)
    }

    pub fn barrier(&self, x: &[f64]) -> f64 {
        let o = &self.spec.obstacle;
        (x[0] - o.center[0]).powi(2) + (x[1] - o.center[1]).powi(2) - o.radius * o.radius
    }

    fn barrier_grad(&self, x: &[f64]) -> [f64; 2] {
        let c = self.spec.obstacle.center;
        [2.0 * (x[0] - c[0]), 2.0 * (x[1] - c[1])]
    }
}

impl Nlp for SafetyFilterNlp {
    fn dims(&self) -> (usize, usize, usize) {
        let bounds = if self.spec.control_bounds { self.shoot.bound_count() } else { 0 };
        (self.shoot.n(), self.spec.horizon + bounds, self.shoot.p())
    }

    fn objective(&self, z: &[f64]) -> f64 {
        (0..self.spec.horizon)
            .map(|t| {
                self.shoot.control(z, t).iter().zip(&self.spec.u_ref[t]).map(|(u, r)| (u - r).powi(2)).sum::<f64>()
            })
            .sum()
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.shoot;
        let mut g = vec![0.0; s.n()];
        for t in 0..s.horizon {
            for (j, (u, r)) in s.control(z, t).iter().zip(&self.spec.u_ref[t]).enumerate() {
                g[s.ui(t) + j] = 2.0 * (u - r);
            }
        }
        g
    }

    fn ineq(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.shoot;
        let beta = self.spec.beta;
        let mut r: Vec<f64> = (0..s.horizon)
            .map(|t| (1.0 - beta) * self.barrier(s.state(z, t)) - self.barrier(s.state(z, t + 1)))
            .collect();
        if self.spec.control_bounds {
            s.bounds(z, &self.spec.u_lower, &self.spec.u_upper, &mut r);
        }
        r
    }

    fn ineq_jacobian(&self, z: &[f64]) -> CscMatrix {
        let s = &self.shoot;
        let beta = self.spec.beta;
        let mut t3 = Vec::new();
        for t in 0..s.horizon {
            let g0 = self.barrier_grad(s.state(z, t));
            let g1 = self.barrier_grad(s.state(z, t + 1));
            for k in 0..2 {
                t3.push((t, s.xi(t) + k, (1.0 - beta) * g0[k]));
                t3.push((t, s.xi(t + 1) + k, -g1[k]));
            }
        }
        if self.spec.control_bounds {
            s.bounds_jacobian(s.horizon, &mut t3);
        }
        let (n, m, _) = self.dims();
        CscMatrix::from_triplets(m, n, &t3).expect("indices in range")
    }

    fn eq(&self, z: &[f64]) -> Vec<f64> {
        self.shoot.eq(z)
    }

    fn eq_jacobian(&self, z: &[f64]) -> CscMatrix {
        self.shoot.eq_jacobian(z)
    }

    fn hessian(&self, z: &[f64], y_i: &[f64], y_e: &[f64]) -> CscMatrix {
        let s = &self.shoot;
        let mut t3 = Vec::new();
        for t in 0..s.horizon {
            for j in 0..s.nu {
                t3.push((s.ui(t) + j, s.ui(t) + j, 2.0));
            }
        }
        if self.hessian_mode == HessianMode::Exact {
            let beta = self.spec.beta;
            for t in 0..s.horizon {
                let y = y_i[t];
                for k in 0..2 {
                    t3.push((s.xi(t) + k, s.xi(t) + k, 2.0 * (1.0 - beta) * y));
                    t3.push((s.xi(t + 1) + k, s.xi(t + 1) + k, -2.0 * y));
                }
            }
            s.add_dynamics_hessian(z, y_e, &mut t3);
        }
        CscMatrix::from_triplets(s.n(), s.n(), &t3).expect("indices in range")
    }

    /// Rollout of the reference controls.
    fn initial_guess(&self) -> Vec<f64> {
        self.shoot.rollout(&self.spec.u_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::SolveStatus;
    use crate::sqp::{build_subproblem, sqp_solve, SqpSettings, SqpStatus};

    fn fd_jacobians(nlp: &dyn Nlp, z: &[f64]) {
        let h = 1e-6;
        let jg = nlp.ineq_jacobian(z).to_dense();
        let je = nlp.eq_jacobian(z).to_dense();
        let (n, m, p) = nlp.dims();
        let grad = nlp.gradient(z);
        for j in 0..n {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[j] += h;
            zm[j] -= h;
            let fd_f = (nlp.objective(&zp) - nlp.objective(&zm)) / (2.0 * h);
            assert!((fd_f - grad[j]).abs() <= 1e-5 * (1.0 + fd_f.abs()), "grad {j}");
            let (gp, gm) = (nlp.ineq(&zp), nlp.ineq(&zm));
            for i in 0..m {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fd - jg[i * n + j]).abs() <= 1e-5 * (1.0 + fd.abs()), "dg{i}/dz{j}");
            }
            let (ep, em) = (nlp.eq(&zp), nlp.eq(&zm));
            for i in 0..p {
                let fd = (ep[i] - em[i]) / (2.0 * h);
                assert!((fd - je[i * n + j]).abs() <= 1e-5 * (1.0 + fd.abs()), "dh{i}/dz{j}");
            }
        }
    }

    fn perturbed(nlp: &dyn Nlp, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        nlp.initial_guess().iter().map(|v| v + rng.uniform_in(-0.5, 0.5)).collect()
    }

    #[test]
    fn dubins_dimensions() {
        let nlp = OcpNlp::new(OcpSpec::random_dubins(0).unwrap()).unwrap();
        assert_eq!(nlp.dims(), (253, 455, 153));
        let qp = build_subproblem(&nlp, &vec![0.0; 253], &[0.0; 455], &[0.0; 153], 0.0).unwrap();
        assert_eq!(qp.dims(), (253, 455, 153));
    }

    #[test]
    fn quadrotor_and_filter_dimensions() {
        let nlp = OcpNlp::new(OcpSpec::random_quadrotor(0).unwrap()).unwrap();
        assert_eq!(nlp.dims(), (812, 400, 612));
        let sf = SafetyFilterNlp::new(SafetyFilterSpec::random_dubins(0, false).unwrap()).unwrap();
        assert_eq!(sf.dims(), (253, 50, 153));
        let sf = SafetyFilterNlp::new(SafetyFilterSpec::random_dubins(0, true).unwrap()).unwrap();
        assert_eq!(sf.dims(), (253, 250, 153));
    }

    #[test]
    fn nlp_jacobians_match_finite_differences() {
        let mut spec = OcpSpec::random_dubins(3).unwrap();
        spec.horizon = 5;
        let nlp = OcpNlp::new(spec).unwrap();
        fd_jacobians(&nlp, &perturbed(&nlp, 1));
        let mut spec = OcpSpec::random_quadrotor(3).unwrap();
        spec.horizon = 4;
        spec.x0[7] = 0.3;
        let nlp = OcpNlp::new(spec).unwrap();
        let mut z = perturbed(&nlp, 2);
        for t in 0..=4 {
            z[t * 12 + 7] = z[t * 12 + 7].clamp(-1.0, 1.0);
        }
        fd_jacobians(&nlp, &z);
        let mut spec = SafetyFilterSpec::random_dubins(5, true).unwrap();
        spec.horizon = 6;
        spec.u_ref.truncate(6);
        let nlp = SafetyFilterNlp::new(spec).unwrap();
        fd_jacobians(&nlp, &perturbed(&nlp, 3));
    }

    #[test]
    fn exact_hessian_matches_finite_difference_of_lagrangian_gradient() {
        let mut spec = OcpSpec::random_dubins(4).unwrap();
        spec.horizon = 3;
        let nlp = OcpNlp::new(spec).unwrap().with_hessian(HessianMode::Exact);
        let (n, m, p) = nlp.dims();
        let z = perturbed(&nlp, 9);
        let mut rng = SplitMix64::new(11);
        let yi: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
        let ye: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        let lag_grad = |z: &[f64]| {
            let mut g = nlp.gradient(z);
            nlp.ineq_jacobian(z).tr_mul_add(&yi, &mut g);
            nlp.eq_jacobian(z).tr_mul_add(&ye, &mut g);
            g
        };
        let hess = nlp.hessian(&z, &yi, &ye).sym_upper_to_dense();
        for j in 0..n {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            let (gp, gm) = (lag_grad(&zp), lag_grad(&zm));
            for i in 0..n {
                let fd = (gp[i] - gm[i]) / 2e-6;
                assert!((fd - hess[i * n + j]).abs() < 1e-5 * (1.0 + fd.abs()), "({i},{j}) {fd} vs {}", hess[i * n + j]);
            }
        }
    }

    #[test]
    fn start_inside_obstacle_does_not_abort() {
        let mut spec = OcpSpec::random_dubins(2).unwrap();
        spec.obstacles[0] = Obstacle { center: [spec.x0[0] + 0.05, spec.x0[1]], radius: 0.5 };
        let nlp = OcpNlp::new(spec).unwrap();
        let z0 = nlp.initial_guess();
        let qp = build_subproblem(&nlp, &z0, &vec![0.0; 455], &vec![0.0; 153], 1e-8).unwrap();
        let s = SqpSettings::default();
        let (sol, _) = crate::solver::solve(&qp, &s.qp, None).unwrap();
        assert_eq!(sol.status, SolveStatus::SolvedInfeasibleOriginal);
        let mut s = SqpSettings::default();
        s.max_iter = 3;
        let res = sqp_solve(&nlp, &s).unwrap();
        assert!(res.iterations >= 1);
    }

    #[test]
    fn safe_reference_is_returned_unchanged() {
        let mut spec = SafetyFilterSpec::random_dubins(1, true).unwrap();
        // move the obstacle far away so the reference is already safe
        spec.obstacle = Obstacle { center: [100.0, 100.0], radius: 1.0 };
        let nlp = SafetyFilterNlp::new(spec.clone()).unwrap();
        let res = sqp_solve(&nlp, &SqpSettings::default()).unwrap();
        assert_eq!(res.status, SqpStatus::Converged);
        let traj = nlp.trajectory(&res.x);
        for (u, r) in traj.controls.iter().zip(&spec.u_ref) {
            for (a, b) in u.iter().zip(r) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn specs_round_trip_through_json() {
        let spec = OcpSpec::random_dubins(7).unwrap();
        let back: OcpSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let sf = SafetyFilterSpec::random_dubins(7, false).unwrap();
        let back: SafetyFilterSpec = serde_json::from_str(&serde_json::to_string(&sf).unwrap()).unwrap();
        assert_eq!(back, sf);
        let mut bad = spec;
        bad.dt = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn random_obstacles_avoid_start_and_target() {
        for seed in 0..20 {
            let spec = OcpSpec::random_dubins(seed).unwrap();
            assert_eq!(spec.obstacles.len(), 5);
            for o in &spec.obstacles {
                assert!(!o.contains(&spec.x0) && !o.contains(&spec.x_target));
            }
        }
    }
}
