//! Batch benchmarking: cold-start solves over a dataset manifest, per-record
//! counters, CSV output and per-class summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::load_problem;
use crate::probgen::DatasetManifest;
use crate::qp::SolveStatus;
use crate::solver::{classify_feasibility, solve, Feasibility, Method, SolveSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStatus {
    Solved,
    /// Converged on the relaxed problem with a nonzero violation certificate.
    SolvedInfeasibleOriginal,
    MaxIter,
    Timeout,
    Unbounded,
    /// Problem file missing or unreadable.
    Skipped,
    /// The solver returned an error.
    Failed,
}

impl From<SolveStatus> for RecordStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Solved => RecordStatus::Solved,
            SolveStatus::SolvedInfeasibleOriginal => RecordStatus::SolvedInfeasibleOriginal,
            SolveStatus::MaxIter => RecordStatus::MaxIter,
            SolveStatus::Timeout => RecordStatus::Timeout,
            SolveStatus::Unbounded => RecordStatus::Unbounded,
        }
    }
}

/// One CSV row. Column order is the field order:
/// `name, class, seed, solver, status, solved, wall_time_s, iterations,
/// factorizations, cg_iterations, qp_residual_inf, relaxed_residual_inf,
/// violations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub name: String,
    pub class: String,
    pub seed: u64,
    pub solver: String,
    pub status: RecordStatus,
    pub solved: bool,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub factorizations: u64,
    pub cg_iterations: u64,
    pub qp_residual_inf: f64,
    pub relaxed_residual_inf: f64,
    pub violations: usize,
}

/// Columns excluded when comparing runs for reproducibility.
pub const TIMING_COLUMNS: &[&str] = &["wall_time_s"];

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub solve: SolveSettings,
    pub jobs: Option<usize>,
}

impl BenchSettings {
    /// Solve-to-tolerance protocol: `eps` absolute, no iteration cap, wall-clock timeout.
    pub fn new(solve: SolveSettings, eps: f64, timeout: Duration) -> Self {
        let solve = SolveSettings { eps_abs: eps, max_iter: usize::MAX, time_limit: Some(timeout), ..solve };
        BenchSettings { solve, jobs: None }
    }

    pub fn solver_tag(&self) -> String {
        let method = match self.solve.method {
            Method::Direct => "direct",
            Method::Indirect(_) => "indirect",
        };
        format!("{}-{method}", self.solve.policy.name())
    }
}

pub fn run_benchmark(manifest_path: impl AsRef<Path>, settings: &BenchSettings) -> Result<Vec<BenchmarkRecord>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let tag = settings.solver_tag();
    let run = || -> Vec<BenchmarkRecord> {
        manifest
            .problems
            .par_iter()
            .map(|entry| {
                let mut rec = BenchmarkRecord {
                    name: entry.name.clone(),
                    class: entry.class.slug().to_string(),
                    seed: entry.seed,
                    solver: tag.clone(),
                    status: RecordStatus::Skipped,
                    solved: false,
                    wall_time_s: 0.0,
                    iterations: 0,
                    factorizations: 0,
                    cg_iterations: 0,
                    qp_residual_inf: f64::NAN,
                    relaxed_residual_inf: f64::NAN,
                    violations: 0,
                };
                let Ok(prob) = load_problem(manifest.resolve(dir, entry)) else {
                    return rec;
                };
                let t0 = Instant::now();
                let out = solve(&prob, &settings.solve, None);
                rec.wall_time_s = t0.elapsed().as_secs_f64();
                match out {
                    Ok((sol, _)) => {
                        rec.status = sol.status.into();
                        rec.solved = sol.status.converged();
                        rec.iterations = sol.iterations;
                        rec.factorizations = sol.stat("factorizations");
                        rec.cg_iterations = sol.stat("cg_iterations");
                        rec.qp_residual_inf = sol.qp_residual_inf;
                        rec.relaxed_residual_inf = sol.relaxed_residual_inf;
                        rec.violations = match classify_feasibility(&sol, settings.solve.eps_abs) {
                            Feasibility::FeasibleOriginal => 0,
                            Feasibility::InfeasibleOriginal { inequality, equality } => {
                                inequality.len() + equality.len()
                            }
                        };
                    }
                    Err(_) => rec.status = RecordStatus::Failed,
                }
                rec
            })
            .collect()
    };
    match settings.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))
            .map(|pool| pool.install(run)),
        None => Ok(run()),
    }
}

pub fn write_csv<W: Write>(records: &[BenchmarkRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchmarkRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// `exp(mean(ln(tᵢ + s))) − s`.
pub fn shifted_geom_mean(times: &[f64], shift: f64) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::Empty("shifted geometric mean of an empty sequence".into()));
    }
    if times.iter().any(|&t| !(t >= 0.0)) || !(shift > 0.0) {
        return Err(Error::param("times must be nonnegative and the shift positive"));
    }
    let mean = times.iter().map(|t| (t + shift).ln()).sum::<f64>() / times.len() as f64;
    Ok(mean.exp() - shift)
}

/// Ratios to the fastest entry.
pub fn normalize(sgms: &[f64]) -> Result<Vec<f64>> {
    let min = sgms.iter().copied().fold(f64::INFINITY, f64::min);
    if sgms.is_empty() {
        return Err(Error::Empty("nothing to normalize".into()));
    }
    if !(min > 0.0) || !min.is_finite() {
        return Err(Error::param("normalization needs positive finite values"));
    }
    Ok(sgms.iter().map(|s| s / min).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: usize,
    pub solved: usize,
    pub skipped: usize,
    pub solved_pct: f64,
    /// Shifted geometric mean of wall time (seconds, shift 1 ms) over attempted problems.
    pub sgm_time_s: Option<f64>,
    /// Means over solved problems.
    pub mean_iterations: Option<f64>,
    pub mean_factorizations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub solver: String,
    pub classes: BTreeMap<String, ClassSummary>,
}

pub const SGM_TIME_SHIFT: f64 = 1e-3;

pub fn summarize(records: &[BenchmarkRecord]) -> BenchSummary {
    let mut by_class: BTreeMap<String, Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.class.clone()).or_default().push(r);
    }
    let classes = by_class
        .into_iter()
        .map(|(class, rs)| {
            let attempted: Vec<_> = rs.iter().filter(|r| r.status != RecordStatus::Skipped).collect();
            let solved: Vec<_> = attempted.iter().filter(|r| r.solved).collect();
            let times: Vec<f64> = attempted.iter().map(|r| r.wall_time_s).collect();
            let mean = |f: &dyn Fn(&BenchmarkRecord) -> f64| {
                (!solved.is_empty()).then(|| solved.iter().map(|r| f(r)).sum::<f64>() / solved.len() as f64)
            };
            let s = ClassSummary {
                count: rs.len(),
                solved: solved.len(),
                skipped: rs.len() - attempted.len(),
                solved_pct: if attempted.is_empty() { 0.0 } else { 100.0 * solved.len() as f64 / attempted.len() as f64 },
                sgm_time_s: shifted_geom_mean(&times, SGM_TIME_SHIFT).ok(),
                mean_iterations: mean(&|r| r.iterations as f64),
                mean_factorizations: mean(&|r| r.factorizations as f64),
            };
            (class, s)
        })
        .collect();
    BenchSummary { solver: records.first().map(|r| r.solver.clone()).unwrap_or_default(), classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ParamPolicy;
    use crate::probgen::{write_dataset, GenSpec, ProblemClass};
    use proptest::prelude::*;

    fn settings() -> BenchSettings {
        BenchSettings::new(
            SolveSettings { policy: ParamPolicy::adaptive(), ..Default::default() },
            1e-3,
            Duration::from_secs(10),
        )
    }

    fn small_dataset(dir: &Path) {
        let specs: Vec<_> =
            (0..3).map(|s| GenSpec::new(ProblemClass::RandomQP, s).with_size("n", 8).with_size("m", 6)).collect();
        write_dataset(dir, &specs).unwrap();
    }

    #[test]
    fn sgm_closed_forms() {
        assert!((shifted_geom_mean(&[0.0, 3.0], 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((shifted_geom_mean(&[2.5; 7], 1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(shifted_geom_mean(&[], 1.0).is_err());
        assert!(shifted_geom_mean(&[-1.0], 1.0).is_err());
    }

    #[test]
    fn fastest_normalizes_to_one() {
        let r = normalize(&[3.0, 1.5, 6.0]).unwrap();
        assert_eq!(r, vec![2.0, 1.0, 4.0]);
        assert!(normalize(&[]).is_err());
        assert!(normalize(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn solves_small_batch_and_skips_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        small_dataset(dir.path());
        let man = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        std::fs::remove_file(dir.path().join(&man.problems[2].path)).unwrap();
        let recs = run_benchmark(dir.path().join("manifest.json"), &settings()).unwrap();
        assert_eq!(recs.len(), 3);
        for r in &recs[..2] {
            assert!(r.solved, "{r:?}");
            assert!(r.qp_residual_inf <= 1e-3);
            assert!(r.factorizations >= 1);
        }
        assert_eq!(recs[2].status, RecordStatus::Skipped);
        let sum = summarize(&recs);
        let c = &sum.classes["random-qp"];
        assert_eq!((c.count, c.solved, c.skipped), (3, 2, 1));
        assert_eq!(c.solved_pct, 100.0);
        assert_eq!(sum.solver, "adaptive-direct");
    }

    #[test]
    fn zero_timeout_times_out_everything() {
        let dir = tempfile::tempdir().unwrap();
        small_dataset(dir.path());
        let s = BenchSettings::new(SolveSettings::default(), 1e-3, Duration::ZERO);
        let recs = run_benchmark(dir.path().join("manifest.json"), &s).unwrap();
        assert!(recs.iter().all(|r| r.status == RecordStatus::Timeout && !r.solved));
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        small_dataset(dir.path());
        let recs = run_benchmark(dir.path().join("manifest.json"), &settings()).unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&recs, std::fs::File::create(&path).unwrap()).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, recs);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("name,class,seed,solver,status,solved,wall_time_s,iterations,"));
    }

    proptest! {
        #[test]
        fn sgm_is_permutation_invariant_and_monotone(
            mut t in prop::collection::vec(0.0f64..100.0, 1..20),
            bump in 0.0f64..10.0,
            idx in any::<prop::sample::Index>(),
        ) {
            let a = shifted_geom_mean(&t, 1.0).unwrap();
            let mut rev = t.clone();
            rev.reverse();
            prop_assert!((shifted_geom_mean(&rev, 1.0).unwrap() - a).abs() <= 1e-9 * (1.0 + a));
            let i = idx.index(t.len());
            t[i] += bump;
            prop_assert!(shifted_geom_mean(&t, 1.0).unwrap() >= a - 1e-12 * (1.0 + a));
        }
    }
}
