//! Loss functions and PAC-Bayes bound arithmetic for certifying learned policies.

use crate::error::{Error, Result};
use crate::qp::{QpProblem, QpSolution};

/// Floor on the reference residual norm, keeping its logarithm finite.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `clip(1 − ln r / ln r*, 0, 1)` on residual 2-norms, with `r*` floored.
pub fn gen_bound_loss_from_norms(r: f64, r_star: f64) -> f64 {
    let r_star = r_star.max(RESIDUAL_FLOOR);
    let ls = r_star.ln();
    if ls >= 0.0 {
        // reference no better than unit residual: all-or-nothing
        return if r <= r_star { 0.0 } else { 1.0 };
    }
    let loss = 1.0 - r.max(f64::MIN_POSITIVE).ln() / ls;
    loss.clamp(0.0, 1.0)
}

/// Log-residual loss of an iterate against the reference solution.
pub fn gen_bound_loss(prob: &QpProblem, sol: &QpSolution, reference: &QpSolution) -> Result<f64> {
    let (r, _) = prob.qp_residual(&sol.x, &sol.y_i, &sol.y_e)?;
    let (rs, _) = prob.qp_residual(&reference.x, &reference.y_i, &reference.y_e)?;
    Ok(gen_bound_loss_from_norms(norm2(&r), norm2(&rs)))
}

/// `min(‖xᴷ − x*‖ / ‖x⁰ − x*‖, 1)`; zero when `x⁰ = x*`.
pub fn progress_loss(x0: &[f64], xk: &[f64], x_star: &[f64]) -> Result<f64> {
    if x0.len() != x_star.len() || xk.len() != x_star.len() {
        return Err(Error::dim("progress loss vectors differ in length"));
    }
    let dist = |a: &[f64]| norm2(&a.iter().zip(x_star).map(|(u, v)| u - v).collect::<Vec<_>>());
    let d0 = dist(x0);
    if d0 == 0.0 {
        return Ok(0.0);
    }
    Ok((dist(xk) / d0).min(1.0))
}

/// `KL(B(p) ‖ B(q))` with `0·ln 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// `sup{q ∈ [p, 1] : KL(B(p) ‖ B(q)) ≤ c}` by bisection. Returns the upper
/// end of the final bracket, so the result never undershoots the supremum.
pub fn inv_kl_bernoulli(p: f64, c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("inv_kl: p = {p} outside [0, 1]")));
    }
    if !(c >= 0.0) {
        return Err(Error::param(format!("inv_kl: c = {c} must be nonnegative")));
    }
    if p == 1.0 || kl_bernoulli(p, 1.0) <= c {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (p, 1.0);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(p, mid) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if c == 0.0 { p } else { hi })
}

fn check_count(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::param(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn check_delta(name: &str, d: f64) -> Result<()> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::param(format!("{name} = {d} must lie in (0, 1)")));
    }
    Ok(())
}

/// `D⁻¹(ℓ_S ‖ (KL + ln(2√N/δ)) / N)`.
pub fn pac_bound(sample_loss: f64, kl_div: f64, n: usize, delta: f64) -> Result<f64> {
    check_count("N", n)?;
    check_delta("delta", delta)?;
    if !(kl_div >= 0.0) {
        return Err(Error::param("KL divergence must be nonnegative"));
    }
    let nf = n as f64;
    inv_kl_bernoulli(sample_loss, (kl_div + (2.0 * nf.sqrt() / delta).ln()) / nf)
}

/// Sample-convergence correction `D⁻¹(ℓ̂ ‖ ln(2/δ′) / M)`.
pub fn sample_convergence_bound(mean_loss: f64, m: usize, delta_prime: f64) -> Result<f64> {
    check_count("M", m)?;
    check_delta("delta'", delta_prime)?;
    inv_kl_bernoulli(mean_loss, (2.0 / delta_prime).ln() / m as f64)
}

/// Bound from an `N × M` grid of losses (rows are problems, columns policy
/// samples), holding with probability `1 − δ − δ′`.
pub fn final_bound(losses: &[Vec<f64>], kl_div: f64, delta: f64, delta_prime: f64) -> Result<f64> {
    let n = losses.len();
    check_count("N", n)?;
    let m = losses[0].len();
    check_count("M", m)?;
    if losses.iter().any(|row| row.len() != m) {
        return Err(Error::dim("loss grid rows differ in length"));
    }
    if losses.iter().flatten().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::param("losses must lie in [0, 1]"));
    }
    let mean = losses.iter().flatten().sum::<f64>() / (n * m) as f64;
    let corrected = sample_convergence_bound(mean.min(1.0), m, delta_prime)?;
    pac_bound(corrected, kl_div, n, delta)
}
