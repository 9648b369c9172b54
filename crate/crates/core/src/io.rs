//! JSON problem files and warm-start envelopes.
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every value bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::solver::SolverState;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscJson {
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl From<&CscMatrix> for CscJson {
    fn from(m: &CscMatrix) -> Self {
        CscJson { col_ptr: m.col_ptr.clone(), row_idx: m.row_idx.clone(), val: m.val.clone() }
    }
}

impl CscJson {
    fn into_matrix(self, nrows: usize, ncols: usize, label: &str) -> Result<CscMatrix> {
        CscMatrix::from_parts(nrows, ncols, self.col_ptr, self.row_idx, self.val)
            .map_err(|e| Error::dim(format!("{label}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(rename = "P")]
    pub p_mat: CscJson,
    pub q: Vec<f64>,
    #[serde(rename = "G")]
    pub g_mat: CscJson,
    pub h: Vec<f64>,
    #[serde(rename = "A")]
    pub a_mat: CscJson,
    pub b: Vec<f64>,
    #[serde(default)]
    pub name: Option<String>,
}

impl From<&QpProblem> for ProblemFile {
    fn from(prob: &QpProblem) -> Self {
        let (n, m, p) = prob.dims();
        ProblemFile {
            n,
            m,
            p,
            p_mat: prob.cost_matrix().into(),
            q: prob.q().to_vec(),
            g_mat: prob.g().into(),
            h: prob.h().to_vec(),
            a_mat: prob.a().into(),
            b: prob.b().to_vec(),
            name: prob.name.clone(),
        }
    }
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<QpProblem> {
        let (n, m, p) = (self.n, self.m, self.p);
        let prob = QpProblem::new(
            self.p_mat.into_matrix(n, n, "P")?,
            self.q,
            self.g_mat.into_matrix(m, n, "G")?,
            self.h,
            self.a_mat.into_matrix(p, n, "A")?,
            self.b,
        )?;
        Ok(match self.name {
            Some(name) => prob.with_name(name),
            None => prob,
        })
    }
}

pub fn problem_to_json(prob: &QpProblem) -> String {
    serde_json::to_string(&ProblemFile::from(prob)).expect("problem data serializes")
}

pub fn problem_from_json(s: &str) -> Result<QpProblem> {
    serde_json::from_str::<ProblemFile>(s)?.into_problem()
}

pub fn save_problem(prob: &QpProblem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, problem_to_json(prob))?;
    Ok(())
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<QpProblem> {
    problem_from_json(&std::fs::read_to_string(path)?)
}

/// SHA-256 of the canonical problem JSON (name excluded), as lowercase hex.
pub fn problem_hash(prob: &QpProblem) -> String {
    let mut file = ProblemFile::from(prob);
    file.name = None;
    let bytes = serde_json::to_vec(&file).expect("problem data serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A saved solver state tied to the problem it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartFile {
    pub name: Option<String>,
    pub problem_hash: String,
    pub state: SolverState,
}

impl WarmStartFile {
    pub fn new(prob: &QpProblem, state: SolverState) -> Self {
        WarmStartFile { name: prob.name.clone(), problem_hash: problem_hash(prob), state }
    }

    /// Returns the state if it was saved for exactly this problem.
    pub fn state_for(self, prob: &QpProblem) -> Result<SolverState> {
        if self.name != prob.name || self.problem_hash != problem_hash(prob) {
            return Err(Error::param("warm start was saved for a different problem"));
        }
        self.state.check_dims(prob)?;
        Ok(self.state)
    }
}

pub fn save_warm_start(prob: &QpProblem, state: &SolverState, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string(&WarmStartFile::new(prob, state.clone()))?)?;
    Ok(())
}

pub fn load_warm_start(prob: &QpProblem, path: impl AsRef<Path>) -> Result<SolverState> {
    serde_json::from_str::<WarmStartFile>(&std::fs::read_to_string(path)?)?.state_for(prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> QpProblem {
        QpProblem::new(
            CscMatrix::from_dense(2, 2, &[0.1 + 0.2, 1.0 / 3.0, 0.0, 2.0]),
            vec![1e-300, -7.25],
            CscMatrix::from_dense(1, 2, &[std::f64::consts::PI, 0.0]),
            vec![-0.0],
            CscMatrix::from_dense(1, 2, &[1.0, 1.0]),
            vec![5e-324],
        )
        .unwrap()
        .with_name("sample")
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let prob = sample();
        let back = problem_from_json(&problem_to_json(&prob)).unwrap();
        assert_eq!(back.name.as_deref(), Some("sample"));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.cost_matrix().val), bits(&prob.cost_matrix().val));
        assert_eq!(bits(back.q()), bits(prob.q()));
        assert_eq!(bits(back.h()), bits(prob.h()));
        assert_eq!(bits(back.b()), bits(prob.b()));
        assert_eq!(problem_hash(&back), problem_hash(&prob));
    }

    #[test]
    fn lower_triangle_p_rejected() {
        let mut file = ProblemFile::from(&sample());
        file.p_mat = CscJson { col_ptr: vec![0, 2, 2], row_idx: vec![0, 1], val: vec![1.0, 1.0] };
        assert!(file.into_problem().is_err());
    }

    #[test]
    fn warm_start_checks_problem_identity() {
        let prob = sample();
        let st = SolverState::cold(&prob);
        let file = WarmStartFile::new(&prob, st.clone());
        let json = serde_json::to_string(&file).unwrap();
        let back: WarmStartFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.clone().state_for(&prob).unwrap(), st);

        let mut other = ProblemFile::from(&prob);
        other.q[1] = 1.0;
        assert!(back.state_for(&other.into_problem().unwrap()).is_err());
    }
}
