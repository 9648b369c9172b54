//! Seeded problem generators for nine QP classes.
//!
//! Objectives are emitted in the solver's `½xᵀPx` convention, so a cost term
//! written `xᵀDx` appears as `P = 2D`.

mod dataset;
mod ocp;
mod rng;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::sparse::CscMatrix;

pub use dataset::{write_dataset, DatasetManifest, ManifestEntry};
pub use ocp::{riccati_terminal_cost, LinearOcp};
pub use rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProblemClass {
    RandomQP,
    RandomQPEq,
    Portfolio,
    Svm,
    Lasso,
    Huber,
    RandomLinearOcp,
    DoubleIntegrator,
    OscillatingMasses,
}

impl ProblemClass {
    pub const ALL: [ProblemClass; 9] = [
        ProblemClass::RandomQP,
        ProblemClass::RandomQPEq,
        ProblemClass::Portfolio,
        ProblemClass::Svm,
        ProblemClass::Lasso,
        ProblemClass::Huber,
        ProblemClass::RandomLinearOcp,
        ProblemClass::DoubleIntegrator,
        ProblemClass::OscillatingMasses,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            ProblemClass::RandomQP => "random-qp",
            ProblemClass::RandomQPEq => "random-qp-eq",
            ProblemClass::Portfolio => "portfolio",
            ProblemClass::Svm => "svm",
            ProblemClass::Lasso => "lasso",
            ProblemClass::Huber => "huber",
            ProblemClass::RandomLinearOcp => "random-linear-ocp",
            ProblemClass::DoubleIntegrator => "double-integrator",
            ProblemClass::OscillatingMasses => "oscillating-masses",
        }
    }

    /// Size knobs accepted as overrides, with their defaults.
    pub fn default_sizes(self) -> &'static [(&'static str, usize)] {
        match self {
            ProblemClass::RandomQP => &[("n", 50), ("m", 40)],
            ProblemClass::RandomQPEq => &[("n", 50), ("m", 25), ("p", 20)],
            ProblemClass::Portfolio => &[("n", 250), ("k", 25)],
            ProblemClass::Svm => &[("n", 10), ("m", 200)],
            ProblemClass::Lasso => &[("n", 5), ("m", 500)],
            ProblemClass::Huber => &[("n", 10), ("m", 100)],
            ProblemClass::RandomLinearOcp => &[("nx", 8), ("nu", 4), ("T", 10)],
            ProblemClass::DoubleIntegrator => &[("T", 20)],
            ProblemClass::OscillatingMasses => &[("T", 10)],
        }
    }

    /// `(variables, inequalities, equalities)` at default sizes.
    pub fn default_dims(self) -> (usize, usize, usize) {
        match self {
            ProblemClass::RandomQP => (50, 40, 0),
            ProblemClass::RandomQPEq => (50, 25, 20),
            ProblemClass::Portfolio => (275, 250, 26),
            ProblemClass::Svm => (210, 400, 0),
            ProblemClass::Lasso => (510, 10, 500),
            ProblemClass::Huber => (310, 200, 100),
            ProblemClass::RandomLinearOcp => (128, 256, 88),
            ProblemClass::DoubleIntegrator => (62, 124, 42),
            ProblemClass::OscillatingMasses => (162, 324, 132),
        }
    }
}

impl fmt::Display for ProblemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ProblemClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        ProblemClass::ALL
            .into_iter()
            .find(|c| c.slug() == key || format!("{c:?}").to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Generator(format!("unknown problem class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub class: ProblemClass,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sizes: BTreeMap<String, usize>,
}

impl GenSpec {
    pub fn new(class: ProblemClass, seed: u64) -> Self {
        GenSpec { class, seed, sizes: BTreeMap::new() }
    }

    pub fn with_size(mut self, key: &str, value: usize) -> Self {
        self.sizes.insert(key.to_string(), value);
        self
    }

    fn size(&self, key: &str) -> usize {
        self.sizes.get(key).copied().unwrap_or_else(|| {
            self.class.default_sizes().iter().find(|(k, _)| *k == key).map(|(_, v)| *v).expect("known size key")
        })
    }

    pub fn validate(&self) -> Result<()> {
        let known = self.class.default_sizes();
        for (k, v) in &self.sizes {
            if !known.iter().any(|(name, _)| name == k) {
                return Err(Error::Generator(format!("{}: unknown size override `{k}`", self.class)));
            }
            if *v == 0 {
                return Err(Error::Generator(format!("{}: size `{k}` must be positive", self.class)));
            }
        }
        if self.class == ProblemClass::Portfolio && self.size("k") >= self.size("n") {
            return Err(Error::Generator("portfolio requires k < n".into()));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        let mut s = format!("{}-{}", self.class.slug(), self.seed);
        for (k, v) in &self.sizes {
            s.push_str(&format!("-{k}{v}"));
        }
        s
    }
}

pub fn generate(spec: &GenSpec) -> Result<QpProblem> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let prob = match spec.class {
        ProblemClass::RandomQP => random_qp(&mut rng, spec.size("n"), spec.size("m"), 0),
        ProblemClass::RandomQPEq => random_qp(&mut rng, spec.size("n"), spec.size("m"), spec.size("p")),
        ProblemClass::Portfolio => portfolio(&mut rng, spec.size("n"), spec.size("k")),
        ProblemClass::Svm => svm(&mut rng, spec.size("n"), spec.size("m")),
        ProblemClass::Lasso => lasso(&mut rng, spec.size("n"), spec.size("m")),
        ProblemClass::Huber => huber(&mut rng, spec.size("n"), spec.size("m")),
        ProblemClass::RandomLinearOcp => {
            LinearOcp::random(&mut rng, spec.size("nx"), spec.size("nu"), spec.size("T"))?.to_qp()
        }
        ProblemClass::DoubleIntegrator => LinearOcp::double_integrator(&mut rng, spec.size("T")).to_qp(),
        ProblemClass::OscillatingMasses => LinearOcp::oscillating_masses(&mut rng, spec.size("T")).to_qp(),
    }?;
    Ok(prob.with_name(spec.name()))
}

/// Triplet accumulator for assembling block-structured matrices.
#[derive(Debug, Default)]
pub(crate) struct Triplets {
    pub t: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.t.push((i, j, v));
        }
    }

    /// Adds a row-major dense block at `(r0, c0)`.
    pub fn block(&mut self, r0: usize, c0: usize, rows: usize, cols: usize, data: &[f64]) {
        for i in 0..rows {
            for j in 0..cols {
                self.push(r0 + i, c0 + j, data[i * cols + j]);
            }
        }
    }

    pub fn scaled_identity(&mut self, r0: usize, c0: usize, n: usize, v: f64) {
        for i in 0..n {
            self.push(r0 + i, c0 + i, v);
        }
    }

    pub fn build(&self, rows: usize, cols: usize) -> Result<CscMatrix> {
        CscMatrix::from_triplets(rows, cols, &self.t)
    }

    /// Builds an upper-triangular cost matrix, discarding strictly lower entries
    /// (callers push full symmetric blocks).
    pub fn build_upper(&self, n: usize) -> Result<CscMatrix> {
        let upper: Vec<_> = self.t.iter().copied().filter(|&(i, j, _)| i <= j).collect();
        CscMatrix::from_triplets(n, n, &upper)
    }
}

fn random_qp(rng: &mut SplitMix64, n: usize, m: usize, p: usize) -> Result<QpProblem> {
    let mm = rng.normal_matrix(n, n);
    let q = rng.normal_vec(n);
    let g = rng.normal_matrix(m, n);
    let a = rng.normal_matrix(p, n);
    let xi = rng.normal_vec(n);
    let zeta = rng.normal_vec(n);

    // P = MᵀM + I
    let mut pt = Triplets::default();
    for i in 0..n {
        for j in i..n {
            let mut v: f64 = (0..n).map(|k| mm[k * n + i] * mm[k * n + j]).sum();
            if i == j {
                v += 1.0;
            }
            pt.push(i, j, v);
        }
    }
    let matvec = |mat: &[f64], rows: usize, v: &[f64]| -> Vec<f64> {
        (0..rows).map(|r| (0..n).map(|c| mat[r * n + c] * v[c]).sum()).collect()
    };
    let h = matvec(&g, m, &xi);
    let b = matvec(&a, p, &zeta);
    QpProblem::new(
        pt.build(n, n)?,
        q,
        CscMatrix::from_dense(m, n, &g),
        h,
        CscMatrix::from_dense(p, n, &a),
        b,
    )
}

/// Variables `(x, y)`, `x ∈ ℝⁿ` weights and `y = Fᵀx ∈ ℝᵏ` factor exposures.
fn portfolio(rng: &mut SplitMix64, n: usize, k: usize) -> Result<QpProblem> {
    let gamma = 1.0;
    let mu = rng.normal_vec(n);
    let f = rng.sparse_normal_matrix(n, k, 0.5);
    let d: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, (k as f64).sqrt())).collect();

    let nv = n + k;
    let mut pt = Triplets::default();
    for (i, di) in d.iter().enumerate() {
        pt.push(i, i, 2.0 * di);
    }
    pt.scaled_identity(n, n, k, 2.0);
    let mut q = vec![0.0; nv];
    for i in 0..n {
        q[i] = -mu[i] / gamma;
    }

    let mut gt = Triplets::default();
    gt.scaled_identity(0, 0, n, -1.0);

    // Fᵀx − y = 0 (k rows), 1ᵀx = 1
    let mut at = Triplets::default();
    for i in 0..n {
        for j in 0..k {
            at.push(j, i, f[i * k + j]);
        }
    }
    at.scaled_identity(0, n, k, -1.0);
    for i in 0..n {
        at.push(k, i, 1.0);
    }
    let mut b = vec![0.0; k + 1];
    b[k] = 1.0;
    QpProblem::new(pt.build(nv, nv)?, q, gt.build(n, nv)?, vec![0.0; n], at.build(k + 1, nv)?, b)
}

/// Variables `(x, t)` with hinge slacks `t`.
fn svm(rng: &mut SplitMix64, n: usize, m: usize) -> Result<QpProblem> {
    let lambda = 1.0;
    let nf = n as f64;
    let mut feats = vec![0.0; m * n];
    let mut labels = vec![0.0; m];
    for i in 0..m {
        let (lab, mean) = if i < m / 2 { (1.0, 1.0 / nf) } else { (-1.0, -1.0 / nf) };
        labels[i] = lab;
        for j in 0..n {
            feats[i * n + j] = rng.normal_mv(mean, 1.0 / nf);
        }
    }
    let nv = n + m;
    let mut pt = Triplets::default();
    pt.scaled_identity(0, 0, n, 2.0);
    let mut q = vec![0.0; nv];
    for t in q[n..].iter_mut() {
        *t = lambda;
    }
    // diag(b)Ax − t ≤ −1 ;  −t ≤ 0
    let mut gt = Triplets::default();
    for i in 0..m {
        for j in 0..n {
            gt.push(i, j, labels[i] * feats[i * n + j]);
        }
        gt.push(i, n + i, -1.0);
        gt.push(m + i, n + i, -1.0);
    }
    let mut h = vec![-1.0; m];
    h.extend(std::iter::repeat(0.0).take(m));
    QpProblem::new(pt.build(nv, nv)?, q, gt.build(2 * m, nv)?, h, CscMatrix::zeros(0, nv), vec![])
}

/// Sparse data matrix and a half-sparse ground truth shared by the regression classes.
fn regression_data(rng: &mut SplitMix64, n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let a = rng.sparse_normal_matrix(m, n, 0.15);
    let v: Vec<f64> = (0..n)
        .map(|_| if rng.bernoulli(0.5) { 0.0 } else { rng.normal_mv(0.0, 1.0 / n as f64) })
        .collect();
    let av = (0..m).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect();
    (a, av)
}

/// Variables `(x, y, t)`: `y = Ax − b` residuals, `t` bounds `|x|`.
fn lasso(rng: &mut SplitMix64, n: usize, m: usize) -> Result<QpProblem> {
    let (a, av): (Vec<f64>, Vec<f64>) = regression_data(rng, n, m);
    let b: Vec<f64> = av.iter().map(|v| v + rng.normal()).collect();
    let lambda = (0..n)
        .map(|j| (0..m).map(|i| a[i * n + j] * b[i]).sum::<f64>().abs())
        .fold(0.0, f64::max)
        / 5.0;

    let nv = 2 * n + m;
    let mut pt = Triplets::default();
    pt.scaled_identity(n, n, m, 2.0);
    let mut q = vec![0.0; nv];
    for t in q[n + m..].iter_mut() {
        *t = lambda;
    }
    // Ax − y = b
    let mut at = Triplets::default();
    at.block(0, 0, m, n, &a);
    at.scaled_identity(0, n, m, -1.0);
    // x − t ≤ 0 ; −x − t ≤ 0
    let mut gt = Triplets::default();
    gt.scaled_identity(0, 0, n, 1.0);
    gt.scaled_identity(0, n + m, n, -1.0);
    gt.scaled_identity(n, 0, n, -1.0);
    gt.scaled_identity(n, n + m, n, -1.0);
    QpProblem::new(pt.build(nv, nv)?, q, gt.build(2 * n, nv)?, vec![0.0; 2 * n], at.build(m, nv)?, b)
}

/// Variables `(x, u, r, s)`: quadratic part `u`, linear tails `r, s ≥ 0`.
fn huber(rng: &mut SplitMix64, n: usize, m: usize) -> Result<QpProblem> {
    let delta = 1.0;
    let (a, av) = regression_data(rng, n, m);
    let b: Vec<f64> = av
        .iter()
        .map(|v| {
            let eps = if rng.bernoulli(0.95) { rng.normal_mv(0.0, 0.25) } else { rng.uniform_in(0.0, 10.0) };
            v + eps
        })
        .collect();

    let nv = n + 3 * m;
    let (u0, r0, s0) = (n, n + m, n + 2 * m);
    let mut pt = Triplets::default();
    pt.scaled_identity(u0, u0, m, 2.0);
    let mut q = vec![0.0; nv];
    for v in q[r0..].iter_mut() {
        *v = 2.0 * delta;
    }
    // Ax − u − r + s = b
    let mut at = Triplets::default();
    at.block(0, 0, m, n, &a);
    at.scaled_identity(0, u0, m, -1.0);
    at.scaled_identity(0, r0, m, -1.0);
    at.scaled_identity(0, s0, m, 1.0);
    let mut gt = Triplets::default();
    gt.scaled_identity(0, r0, m, -1.0);
    gt.scaled_identity(m, s0, m, -1.0);
    QpProblem::new(pt.build(nv, nv)?, q, gt.build(2 * m, nv)?, vec![0.0; 2 * m], at.build(m, nv)?, b)
}
