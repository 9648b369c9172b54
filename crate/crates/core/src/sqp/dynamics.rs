//! Continuous-time vehicle models with analytic Jacobians.

use std::f64::consts::PI;

pub trait Dynamics {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    /// `ẋ = f(x, u)`
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    /// `(∂f/∂x, ∂f/∂u)`, row-major `nx×nx` and `nx×nu`.
    fn jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>);
    /// `Σ_j λ_j ∇²f_j` over the stacked `(x, u)`, row-major, if available.
    fn weighted_hessian(&self, _x: &[f64], _u: &[f64], _lambda: &[f64]) -> Option<Vec<f64>> {
        None
    }
    /// Per-component half-ranges for sampling start and target states.
    fn sample_box(&self) -> Vec<f64>;
    /// Input that keeps the vehicle at rest.
    fn rest_input(&self) -> Vec<f64> {
        vec![0.0; self.nu()]
    }
}

/// Forward Euler: `x + dt·f(x, u)`.
pub fn euler_step(dynamics: &dyn Dynamics, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    dynamics.f(x, u).iter().zip(x).map(|(fx, xi)| xi + dt * fx).collect()
}

/// Unicycle: state `(p_x, p_y, θ)`, input `(v, ω)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dubins;

impl Dynamics for Dubins {
    fn nx(&self) -> usize {
        3
    }
    fn nu(&self) -> usize {
        2
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![u[0] * x[2].cos(), u[0] * x[2].sin(), u[1]]
    }
    fn jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (s, c) = x[2].sin_cos();
        let v = u[0];
        let a = vec![0.0, 0.0, -v * s, 0.0, 0.0, v * c, 0.0, 0.0, 0.0];
        let b = vec![c, 0.0, s, 0.0, 0.0, 1.0];
        (a, b)
    }
    fn weighted_hessian(&self, x: &[f64], u: &[f64], l: &[f64]) -> Option<Vec<f64>> {
        // only θ (index 2) and v (index 3) interact
        let (s, c) = x[2].sin_cos();
        let v = u[0];
        let mut h = vec![0.0; 25];
        h[2 * 5 + 2] = -l[0] * v * c - l[1] * v * s;
        let tv = -l[0] * s + l[1] * c;
        h[2 * 5 + 3] = tv;
        h[3 * 5 + 2] = tv;
        Some(h)
    }
    fn sample_box(&self) -> Vec<f64> {
        vec![5.0, 5.0, PI]
    }
}

/// Rigid-body quadrotor with ZYX Euler angles. State
/// `(p[3], v[3], φ, θ, ψ, ω[3])`, input `(F, τ[3])`.
#[derive(Debug, Clone, Copy)]
pub struct Quadrotor {
    pub mass: f64,
    pub inertia: f64,
    pub gravity: f64,
}

impl Default for Quadrotor {
    fn default() -> Self {
        Quadrotor { mass: 1.0, inertia: 1.0, gravity: 9.81 }
    }
}

impl Quadrotor {
    /// Body z axis in the world frame, `R(φ,θ,ψ)·e₃`, and its partials.
    fn thrust_axis(phi: f64, theta: f64, psi: f64) -> ([f64; 3], [[f64; 3]; 3]) {
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        let a = [cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf];
        let d_phi = [-cp * st * sf + sp * cf, -sp * st * sf - cp * cf, -ct * sf];
        let d_theta = [cp * ct * cf, sp * ct * cf, -st * cf];
        let d_psi = [-sp * st * cf + cp * sf, cp * st * cf + sp * sf, 0.0];
        (a, [d_phi, d_theta, d_psi])
    }
}

impl Dynamics for Quadrotor {
    fn nx(&self) -> usize {
        12
    }
    fn nu(&self) -> usize {
        4
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (phi, theta, psi) = (x[6], x[7], x[8]);
        let (p, q, r) = (x[9], x[10], x[11]);
        let (a, _) = Self::thrust_axis(phi, theta, psi);
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let tt = st / ct;
        let acc = u[0] / self.mass;
        vec![
            x[3],
            x[4],
            x[5],
            acc * a[0],
            acc * a[1],
            acc * a[2] - self.gravity,
            p + sf * tt * q + cf * tt * r,
            cf * q - sf * r,
            (sf * q + cf * r) / ct,
            u[1] / self.inertia,
            u[2] / self.inertia,
            u[3] / self.inertia,
        ]
    }
    fn jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (phi, theta, psi) = (x[6], x[7], x[8]);
        let (q, r) = (x[10], x[11]);
        let (axis, d) = Self::thrust_axis(phi, theta, psi);
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let tt = st / ct;
        let acc = u[0] / self.mass;
        let mut a = vec![0.0; 144];
        let mut b = vec![0.0; 48];
        let set = |m: &mut Vec<f64>, cols: usize, i: usize, j: usize, v: f64| m[i * cols + j] = v;
        for i in 0..3 {
            set(&mut a, 12, i, 3 + i, 1.0);
            for (k, dk) in d.iter().enumerate() {
                set(&mut a, 12, 3 + i, 6 + k, acc * dk[i]);
            }
            set(&mut b, 4, 3 + i, 0, axis[i] / self.mass);
            set(&mut b, 4, 9 + i, 1 + i, 1.0 / self.inertia);
        }
        let sec2 = 1.0 / (ct * ct);
        let w = sf * q + cf * r;
        // φ̇
        set(&mut a, 12, 6, 6, cf * tt * q - sf * tt * r);
        set(&mut a, 12, 6, 7, w * sec2);
        set(&mut a, 12, 6, 9, 1.0);
        set(&mut a, 12, 6, 10, sf * tt);
        set(&mut a, 12, 6, 11, cf * tt);
        // θ̇
        set(&mut a, 12, 7, 6, -sf * q - cf * r);
        set(&mut a, 12, 7, 10, cf);
        set(&mut a, 12, 7, 11, -sf);
        // ψ̇
        set(&mut a, 12, 8, 6, (cf * q - sf * r) / ct);
        set(&mut a, 12, 8, 7, w * st * sec2);
        set(&mut a, 12, 8, 10, sf / ct);
        set(&mut a, 12, 8, 11, cf / ct);
        (a, b)
    }
    fn sample_box(&self) -> Vec<f64> {
        vec![5.0, 5.0, 5.0, 1.0, 1.0, 1.0, PI, PI / 2.0, PI, 1.0, 1.0, 1.0]
    }
    fn rest_input(&self) -> Vec<f64> {
        vec![self.mass * self.gravity, 0.0, 0.0, 0.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probgen::SplitMix64;

    fn fd_check(dynamics: &dyn Dynamics, seed: u64) {
        let (nx, nu) = (dynamics.nx(), dynamics.nu());
        let mut rng = SplitMix64::new(seed);
        let bx = dynamics.sample_box();
        // keep θ away from the Euler singularity
        let x: Vec<f64> = bx.iter().map(|b| rng.uniform_in(-0.9 * b, 0.9 * b)).collect();
        let u: Vec<f64> = (0..nu).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let (a, b) = dynamics.jacobians(&x, &u);
        let h = 1e-6;
        for j in 0..nx + nu {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            if j < nx {
                xp[j] += h;
                xm[j] -= h;
            } else {
                up[j - nx] += h;
                um[j - nx] -= h;
            }
            let fp = dynamics.f(&xp, &up);
            let fm = dynamics.f(&xm, &um);
            for i in 0..nx {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let an = if j < nx { a[i * nx + j] } else { b[i * nu + j - nx] };
                assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "d f{i} / d z{j}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn dubins_jacobian_matches_finite_differences() {
        for seed in 0..5 {
            fd_check(&Dubins, seed);
        }
    }

    #[test]
    fn quadrotor_jacobian_matches_finite_differences() {
        for seed in 0..5 {
            fd_check(&Quadrotor::default(), seed);
        }
    }

    #[test]
    fn dubins_hessian_matches_finite_differences() {
        let x = [0.3, -1.0, 0.7];
        let u = [1.5, -0.2];
        let l = [0.4, -1.3, 2.0];
        let h = Dubins.weighted_hessian(&x, &u, &l).unwrap();
        let grad = |z: &[f64]| -> Vec<f64> {
            let (a, b) = Dubins.jacobians(&z[..3], &z[3..]);
            (0..5)
                .map(|j| (0..3).map(|i| l[i] * if j < 3 { a[i * 3 + j] } else { b[i * 2 + j - 3] }).sum())
                .collect()
        };
        let z: Vec<f64> = x.iter().chain(&u).copied().collect();
        let eps = 1e-6;
        for j in 0..5 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += eps;
            zm[j] -= eps;
            let (gp, gm) = (grad(&zp), grad(&zm));
            for i in 0..5 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - h[i * 5 + j]).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let q = Quadrotor::default();
        let mut x = vec![0.0; 12];
        x[0] = 1.0;
        x[8] = 0.4; // yaw does not affect hover
        let xdot = q.f(&x, &q.rest_input());
        assert!(xdot.iter().all(|v| v.abs() < 1e-12), "{xdot:?}");
    }
}
