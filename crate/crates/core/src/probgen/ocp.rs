//! Linear optimal-control problems in stacked form.
//!
//! Variables are `(x₀, …, x_T, u₀, …, u_{T−1})`. Equalities pin `x₀` and
//! enforce the dynamics; state bounds apply at every stage including `x₀`.

use nalgebra::DMatrix;

use super::{SplitMix64, Triplets};
use crate::error::{Error, Result};
use crate::qp::QpProblem;

#[derive(Debug, Clone)]
pub struct LinearOcp {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qt: DMatrix<f64>,
    /// Symmetric box `|x_i| ≤ x_bound_i`.
    pub x_bound: Vec<f64>,
    pub u_bound: Vec<f64>,
    pub x0: Vec<f64>,
    pub horizon: usize,
}

/// Discrete algebraic Riccati fixed point
/// `X = Q + AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA`, iterated from `X = Q` until the
/// update falls below `1e-10` relative to `max(1, ‖X‖_max)`.
pub fn riccati_terminal_cost(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    for _ in 0..10_000 {
        let next = riccati_map(ad, bd, q, r, &x)?;
        let diff = (&next - &x).amax();
        x = next;
        if diff <= 1e-10 * x.amax().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::Generator("Riccati iteration did not converge in 10000 steps".into()))
}

/// One Riccati step in the form `Q + KᵀRK + (A − BK)ᵀX(A − BK)` with
/// `K = (R + BᵀXB)⁻¹BᵀXA`, which stays symmetric PSD in floating point.
pub(crate) fn riccati_map(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let s = r + bd.transpose() * x * bd;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Generator("R + BᵀXB is not positive definite in Riccati iteration".into()))?;
    let k = chol.solve(&(bd.transpose() * x * ad));
    let acl = ad - bd * &k;
    let next = q + k.transpose() * r * &k + acl.transpose() * x * &acl;
    Ok((&next + next.transpose()) * 0.5)
}

fn uniform_box(rng: &mut SplitMix64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| rng.uniform_in(*l, *h)).collect()
}

impl LinearOcp {
    pub fn nx(&self) -> usize {
        self.ad.nrows()
    }

    pub fn nu(&self) -> usize {
        self.bd.ncols()
    }

    /// Dynamics whose Riccati iteration fails are redrawn from the same stream
    /// (at most ten attempts).
    pub fn random(rng: &mut SplitMix64, nx: usize, nu: usize, horizon: usize) -> Result<Self> {
        let mut last = None;
        for _ in 0..10 {
            match Self::random_once(rng, nx, nu, horizon) {
                Ok(ocp) => return Ok(ocp),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn random_once(rng: &mut SplitMix64, nx: usize, nu: usize, horizon: usize) -> Result<Self> {
        let a: Vec<f64> = (0..nx).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let xm = DMatrix::from_row_slice(nx, nx, &rng.normal_matrix(nx, nx));
        let bd = DMatrix::from_row_slice(nx, nu, &rng.normal_matrix(nx, nu));
        let x_inv = xm
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Generator("singular similarity transform".into()))?;
        let ad = x_inv * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a)) * xm;

        let mask: Vec<bool> = (0..nx).map(|_| rng.bernoulli(0.7)).collect();
        let qd: Vec<f64> = mask.iter().map(|&on| if on { rng.uniform_in(0.0, 10.0) } else { 0.0 }).collect();
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(qd));
        let r = DMatrix::identity(nu, nu) * 0.1;
        let qt = riccati_terminal_cost(&ad, &bd, &q, &r)?;

        let x_bound: Vec<f64> = (0..nx).map(|_| rng.uniform_in(1.0, 2.0)).collect();
        let u_bound: Vec<f64> = (0..nu).map(|_| rng.uniform_in(0.0, 0.1)).collect();
        let lo: Vec<f64> = x_bound.iter().map(|b| -0.5 * b).collect();
        let hi: Vec<f64> = x_bound.iter().map(|b| 0.5 * b).collect();
        let x0 = uniform_box(rng, &lo, &hi);
        Ok(LinearOcp { ad, bd, q, r, qt, x_bound, u_bound, x0, horizon })
    }

    pub fn double_integrator(rng: &mut SplitMix64, horizon: usize) -> Self {
        let x0 = uniform_box(rng, &[-1.0, -0.3], &[1.0, 0.3]);
        LinearOcp {
            ad: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            bd: DMatrix::from_row_slice(2, 1, &[0.5, 0.1]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            qt: DMatrix::identity(2, 2),
            x_bound: vec![5.0, 1.0],
            u_bound: vec![0.1],
            x0,
            horizon,
        }
    }

    pub fn oscillating_masses(rng: &mut SplitMix64, horizon: usize) -> Self {
        let (c, d, b) = (1.0, 0.1, 2.0);
        let a = -2.0 * c;
        let dt = 0.5;
        let mut ac = DMatrix::<f64>::zeros(12, 12);
        for i in 0..6 {
            ac[(i, 6 + i)] = 1.0;
            ac[(6 + i, i)] = a;
            ac[(6 + i, 6 + i)] = b;
            if i + 1 < 6 {
                // L + Lᵀ couples neighbouring masses
                ac[(6 + i + 1, i)] = c;
                ac[(6 + i, i + 1)] = c;
                ac[(6 + i + 1, 6 + i)] = d;
                ac[(6 + i, 6 + i + 1)] = d;
            }
        }
        let f_rows: [[f64; 3]; 6] = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let mut bc = DMatrix::<f64>::zeros(12, 3);
        for (i, row) in f_rows.iter().enumerate() {
            for j in 0..3 {
                bc[(6 + i, j)] = row[j];
            }
        }
        let x0 = uniform_box(rng, &[-1.0; 12], &[1.0; 12]);
        LinearOcp {
            ad: DMatrix::identity(12, 12) + ac * dt,
            bd: bc * dt,
            q: DMatrix::identity(12, 12),
            r: DMatrix::identity(3, 3),
            qt: DMatrix::identity(12, 12),
            x_bound: vec![4.0; 12],
            u_bound: vec![0.5; 3],
            x0,
            horizon,
        }
    }

    pub fn to_qp(&self) -> Result<QpProblem> {
        let (nx, nu, t) = (self.nx(), self.nu(), self.horizon);
        let xs = (t + 1) * nx;
        let nv = xs + t * nu;
        let xi = |k: usize| k * nx;
        let ui = |k: usize| xs + k * nu;

        let mut pt = Triplets::default();
        let dense = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        let (q2, r2, qt2) = (dense(&(&self.q * 2.0)), dense(&(&self.r * 2.0)), dense(&(&self.qt * 2.0)));
        for k in 0..t {
            pt.block(xi(k), xi(k), nx, nx, &q2);
            pt.block(ui(k), ui(k), nu, nu, &r2);
        }
        pt.block(xi(t), xi(t), nx, nx, &qt2);

        let mut at = Triplets::default();
        let mut b = vec![0.0; (t + 1) * nx];
        at.scaled_identity(0, 0, nx, 1.0);
        b[..nx].copy_from_slice(&self.x0);
        let neg_a = dense(&(-&self.ad));
        let neg_b = dense(&(-&self.bd));
        for k in 0..t {
            let row = (k + 1) * nx;
            at.scaled_identity(row, xi(k + 1), nx, 1.0);
            at.block(row, xi(k), nx, nx, &neg_a);
            at.block(row, ui(k), nx, nu, &neg_b);
        }

        let mut gt = Triplets::default();
        let mut h = Vec::new();
        let mut row = 0;
        for k in 0..=t {
            gt.scaled_identity(row, xi(k), nx, 1.0);
            gt.scaled_identity(row + nx, xi(k), nx, -1.0);
            h.extend(&self.x_bound);
            h.extend(&self.x_bound);
            row += 2 * nx;
        }
        for k in 0..t {
            gt.scaled_identity(row, ui(k), nu, 1.0);
            gt.scaled_identity(row + nu, ui(k), nu, -1.0);
            h.extend(&self.u_bound);
            h.extend(&self.u_bound);
            row += 2 * nu;
        }
        QpProblem::new(pt.build_upper(nv)?, vec![0.0; nv], gt.build(row, nv)?, h, at.build(b.len(), nv)?, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_terminal_cost_is_q() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let qt = riccati_terminal_cost(&DMatrix::zeros(2, 2), &DMatrix::from_element(2, 1, 1.0), &q, &DMatrix::identity(1, 1))
            .unwrap();
        assert!((qt - q).amax() < 1e-14);
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        // x = 1 + 0.25x − 0.25x²/(1 + x)  ⇔  x² − 0.25x − 1 = 0
        let mut x = 1.0f64;
        for _ in 0..200 {
            x = 1.0 + 0.25 * x - 0.25 * x * x / (1.0 + x);
        }
        let closed = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert!((x - closed).abs() < 1e-12);
        let got = riccati_terminal_cost(
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!((got[(0, 0)] - closed).abs() < 1e-9);
    }

    #[test]
    fn random_instance_riccati_residual_small() {
        let mut rng = SplitMix64::new(9);
        let ocp = LinearOcp::random(&mut rng, 8, 4, 10).unwrap();
        // textbook residual, independent of the stabilized update
        let (a, b, x) = (&ocp.ad, &ocp.bd, &ocp.qt);
        let s_inv = (&ocp.r + b.transpose() * x * b).try_inverse().unwrap();
        let rhs = &ocp.q + a.transpose() * x * a - a.transpose() * x * b * s_inv * b.transpose() * x * a;
        let res = rhs - x;
        assert!(res.amax() <= 1e-8);
        assert!((&ocp.qt - ocp.qt.transpose()).amax() == 0.0);
        assert!(ocp.qt.clone().symmetric_eigenvalues().min() >= -1e-8);
    }

    #[test]
    fn zero_control_rollout_satisfies_dynamics_rows() {
        let mut rng = SplitMix64::new(2);
        let ocp = LinearOcp::double_integrator(&mut rng, 4);
        let prob = ocp.to_qp().unwrap();
        let mut z = vec![0.0; prob.n()];
        let mut x = ocp.x0.clone();
        for k in 0..=4 {
            z[2 * k..2 * k + 2].copy_from_slice(&x);
            x = vec![x[0] + x[1], x[1]];
        }
        assert!(prob.eq_value(&z).iter().all(|v| v.abs() < 1e-14));
    }
}
