use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use flexqp::bench::{run_benchmark, summarize, write_csv, BenchSettings};
use flexqp::cert::{final_bound, inv_kl_bernoulli, pac_bound};
use flexqp::io::load_problem;
use flexqp::linsys::CgConfig;
use flexqp::policy::{load_weights, AdaptiveConfig};
use flexqp::probgen::{write_dataset, GenSpec, ProblemClass};
use flexqp::solver::{classify_feasibility, solve, Feasibility};
use flexqp::sqp::{
    sqp_solve, HessianMode, Nlp, OcpNlp, OcpSpec, SafetyFilterNlp, SafetyFilterSpec, SqpResult, SqpSettings,
    SqpStatus, SqpTrajectory,
};
use flexqp::{Method, ParamDefaults, ParamPolicy, SolveSettings, SolveStatus};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_UNFINISHED: u8 = 3;

#[derive(Parser)]
#[command(name = "flexqp", version, about = "Always-feasible QP solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded problems plus a manifest.
    Generate {
        class: String,
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        /// Size override, `key=value`; repeatable.
        #[arg(long = "size")]
        sizes: Vec<String>,
    },
    /// Solve one problem file and print the solution as JSON.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Write one residual summary per iteration as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Solve every problem in a manifest; write a CSV and a JSON summary.
    Bench {
        manifest: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write a random trajectory-optimization task file.
    Task {
        #[arg(value_enum)]
        kind: TaskKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        /// Safety filter only: drop the control bound rows.
        #[arg(long)]
        no_control_bounds: bool,
    },
    /// Run SQP on a task file and write the trajectory.
    Sqp {
        task: PathBuf,
        /// Options for the QP subproblems.
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 1e-2)]
        sqp_eps: f64,
        #[arg(long, default_value_t = 50)]
        sqp_max_iter: usize,
        #[arg(long, value_enum, default_value_t = HessianArg::GaussNewton)]
        hessian: HessianArg,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Evaluate a PAC-Bayes bound from a loss file.
    Certify {
        /// JSON array of losses (one per problem) or an N×M grid.
        losses: PathBuf,
        /// KL divergence to the prior; read from `--weights` when omitted.
        #[arg(long)]
        kl: Option<f64>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0.009)]
        delta: f64,
        /// Sample-convergence confidence; used for grids.
        #[arg(long, default_value_t = 0.001)]
        delta_prime: f64,
        /// Evaluate `D⁻¹(mean loss ‖ c)` directly instead of the bound.
        #[arg(long, conflicts_with_all = ["kl", "weights"])]
        c: Option<f64>,
    },
}

#[derive(Args, Clone, Default)]
struct SolverArgs {
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// fixed | adaptive | learned[:<weights.json>]
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Direct,
    Indirect,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    Dubins,
    Quadrotor,
    SafetyFilter,
}

#[derive(Clone, Copy, ValueEnum)]
enum HessianArg {
    GaussNewton,
    Exact,
}

impl SolverArgs {
    fn policy(&self, default: ParamPolicy) -> Result<ParamPolicy> {
        let Some(spec) = self.policy.as_deref() else {
            if self.weights.is_some() {
                bail!("--weights given without --policy learned");
            }
            return Ok(default);
        };
        let (name, path) = match spec.split_once(':') {
            Some((n, p)) => (n, Some(PathBuf::from(p))),
            None => (spec, None),
        };
        Ok(match name {
            "fixed" => ParamPolicy::fixed(ParamDefaults::default()),
            "adaptive" => match default {
                a @ ParamPolicy::Adaptive(_) => a,
                _ => ParamPolicy::Adaptive(AdaptiveConfig::default()),
            },
            "learned" => {
                let path = match (path, self.weights.clone()) {
                    (Some(p), None) | (None, Some(p)) => p,
                    (Some(p), Some(w)) if p == w => p,
                    (Some(_), Some(_)) => bail!("conflicting weight paths in --policy and --weights"),
                    (None, None) => bail!("--policy learned requires a weights path"),
                };
                let w = load_weights(&path).with_context(|| format!("loading weights {}", path.display()))?;
                ParamPolicy::learned(w)
            }
            other => bail!("unknown policy `{other}` (expected fixed, adaptive or learned:<path>)"),
        })
    }

    fn apply(&self, base: SolveSettings) -> Result<SolveSettings> {
        let mut s = base;
        if let Some(e) = self.eps {
            s.eps_abs = e;
        }
        if let Some(k) = self.max_iter {
            s.max_iter = k;
        }
        if let Some(t) = self.timeout_ms {
            s.time_limit = Some(Duration::from_millis(t));
        }
        s.policy = self.policy(s.policy.clone())?;
        match self.method {
            Some(MethodArg::Direct) => s.method = Method::Direct,
            Some(MethodArg::Indirect) => s.method = Method::Indirect(CgConfig::for_eps(s.eps_abs)),
            None => {}
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    status: SolveStatus,
    iterations: usize,
    qp_residual_inf: f64,
    relaxed_residual_inf: f64,
    objective: f64,
    violated_inequalities: Vec<usize>,
    violated_equalities: Vec<usize>,
    x: &'a [f64],
    y_i: &'a [f64],
    y_e: &'a [f64],
    z_i: &'a [f64],
    z_e: &'a [f64],
    stats: &'a std::collections::BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct SqpOutput<'a> {
    status: SqpStatus,
    iterations: usize,
    residual: f64,
    trajectory: SqpTrajectory,
    history: &'a [flexqp::sqp::SqpIterate],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LossFile {
    Flat(Vec<f64>),
    Grid(Vec<Vec<f64>>),
}

#[derive(Serialize)]
struct CertifyOutput {
    n: usize,
    m: usize,
    sample_loss: f64,
    kl: f64,
    bound: f64,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, s + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{s}"),
    }
    Ok(())
}

fn cmd_generate(class: &str, count: usize, seed: u64, out: &Path, sizes: &[String]) -> Result<u8> {
    let class: ProblemClass = class.parse()?;
    if count == 0 {
        bail!("count must be at least 1");
    }
    let mut overrides = Vec::new();
    for kv in sizes {
        let (k, v) = kv.split_once('=').with_context(|| format!("size override `{kv}` is not key=value"))?;
        overrides.push((k.to_string(), v.parse::<usize>().with_context(|| format!("size `{k}`"))?));
    }
    let specs: Vec<GenSpec> = (0..count as u64)
        .map(|i| overrides.iter().fold(GenSpec::new(class, seed + i), |g, (k, v)| g.with_size(k, *v)))
        .collect();
    write_dataset(out, &specs).with_context(|| format!("writing dataset to {}", out.display()))?;
    println!("{}", out.join("manifest.json").display());
    Ok(EXIT_OK)
}

fn cmd_solve(problem: &Path, args: &SolverArgs, out: Option<&Path>, trace: Option<&Path>) -> Result<u8> {
    let prob = load_problem(problem).with_context(|| format!("loading {}", problem.display()))?;
    let mut settings = args.apply(SolveSettings::default())?;
    settings.trace = trace.is_some();
    let (sol, tr) = solve(&prob, &settings, None)?;
    if let (Some(path), Some(tr)) = (trace, tr) {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for row in &tr {
            serde_json::to_writer(&mut w, row)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    let (violated_inequalities, violated_equalities) = match classify_feasibility(&sol, settings.eps_abs) {
        Feasibility::FeasibleOriginal => (vec![], vec![]),
        Feasibility::InfeasibleOriginal { inequality, equality } => (inequality, equality),
    };
    let output = SolveOutput {
        status: sol.status,
        iterations: sol.iterations,
        qp_residual_inf: sol.qp_residual_inf,
        relaxed_residual_inf: sol.relaxed_residual_inf,
        objective: prob.objective(&sol.x)?,
        violated_inequalities,
        violated_equalities,
        x: &sol.x,
        y_i: &sol.y_i,
        y_e: &sol.y_e,
        z_i: &sol.z_i,
        z_e: &sol.z_e,
        stats: &sol.stats,
    };
    write_json(&output, out)?;
    Ok(match sol.status {
        SolveStatus::Solved => EXIT_OK,
        SolveStatus::SolvedInfeasibleOriginal => EXIT_INFEASIBLE,
        SolveStatus::MaxIter | SolveStatus::Timeout | SolveStatus::Unbounded => EXIT_UNFINISHED,
    })
}

fn cmd_bench(manifest: &Path, args: &SolverArgs, csv: &Path, summary: Option<&Path>, jobs: Option<usize>) -> Result<u8> {
    let base = SolveSettings { policy: ParamPolicy::adaptive(), ..SolveSettings::default() };
    let mut settings = BenchSettings::new(
        args.apply(base)?,
        args.eps.unwrap_or(1e-3),
        Duration::from_millis(args.timeout_ms.unwrap_or(1000)),
    );
    if let Some(k) = args.max_iter {
        settings.solve.max_iter = k;
    }
    if jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    settings.jobs = jobs;
    let records = run_benchmark(manifest, &settings).with_context(|| format!("running {}", manifest.display()))?;
    write_csv(&records, File::create(csv).with_context(|| format!("creating {}", csv.display()))?)?;
    let sum = summarize(&records);
    write_json(&sum, summary)?;
    Ok(EXIT_OK)
}

fn cmd_task(kind: TaskKind, seed: u64, out: &Path, control_bounds: bool) -> Result<u8> {
    let json = match kind {
        TaskKind::Dubins => serde_json::to_string_pretty(&OcpSpec::random_dubins(seed)?)?,
        TaskKind::Quadrotor => serde_json::to_string_pretty(&OcpSpec::random_quadrotor(seed)?)?,
        TaskKind::SafetyFilter => serde_json::to_string_pretty(&SafetyFilterSpec::random_dubins(seed, control_bounds)?)?,
    };
    std::fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}

fn run_sqp<N: Nlp>(nlp: &N, settings: &SqpSettings, traj: impl Fn(&N, &[f64]) -> SqpTrajectory, out: Option<&Path>) -> Result<SqpResult> {
    let res = sqp_solve(nlp, settings)?;
    let output = SqpOutput {
        status: res.status,
        iterations: res.iterations,
        residual: res.residual,
        trajectory: traj(nlp, &res.x),
        history: &res.history,
    };
    write_json(&output, out)?;
    Ok(res)
}

fn cmd_sqp(task: &Path, args: &SolverArgs, eps: f64, max_iter: usize, hessian: HessianArg, out: Option<&Path>) -> Result<u8> {
    let text = std::fs::read_to_string(task).with_context(|| format!("reading {}", task.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", task.display()))?;
    let base = SqpSettings::default();
    let settings = SqpSettings { eps, max_iter, qp: args.apply(base.qp.clone())?, ..base };
    let mode = match hessian {
        HessianArg::GaussNewton => HessianMode::GaussNewton,
        HessianArg::Exact => HessianMode::Exact,
    };
    let res = if value.get("u_ref").is_some() {
        let spec: SafetyFilterSpec = serde_json::from_value(value)?;
        let nlp = SafetyFilterNlp::new(spec)?.with_hessian(mode);
        run_sqp(&nlp, &settings, |n, z| n.trajectory(z), out)?
    } else {
        let spec: OcpSpec = serde_json::from_value(value)?;
        let nlp = OcpNlp::new(spec)?.with_hessian(mode);
        run_sqp(&nlp, &settings, |n, z| n.trajectory(z), out)?
    };
    Ok(match res.status {
        SqpStatus::Converged => EXIT_OK,
        SqpStatus::MaxIter | SqpStatus::Stalled => EXIT_UNFINISHED,
    })
}

fn cmd_certify(
    losses: &Path,
    kl: Option<f64>,
    weights: Option<&Path>,
    delta: f64,
    delta_prime: f64,
    c: Option<f64>,
) -> Result<u8> {
    let kl = match (kl, weights) {
        _ if c.is_some() => 0.0,
        (Some(k), _) => k,
        (None, Some(w)) => load_weights(w)?.kl.context("weight file carries no kl value")?,
        (None, None) => bail!("certify needs --kl or --weights"),
    };
    let text = std::fs::read_to_string(losses).with_context(|| format!("reading {}", losses.display()))?;
    let (n, m, sample_loss, bound) = match serde_json::from_str::<LossFile>(&text)? {
        LossFile::Flat(v) => {
            if v.iter().any(|l| !(0.0..=1.0).contains(l)) {
                bail!("losses must lie in [0, 1]");
            }
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            (v.len(), 1, mean, pac_bound(mean, kl, v.len(), delta)?)
        }
        LossFile::Grid(g) => {
            let (n, m) = (g.len(), g.first().map_or(0, Vec::len));
            let mean = g.iter().flatten().sum::<f64>() / (n * m).max(1) as f64;
            (n, m, mean, final_bound(&g, kl, delta, delta_prime)?)
        }
    };
    let bound = match c {
        Some(c) => inv_kl_bernoulli(sample_loss, c)?,
        None => bound,
    };
    write_json(&CertifyOutput { n, m, sample_loss, kl, bound }, None)?;
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Generate { class, count, seed, out, sizes } => cmd_generate(&class, count, seed, &out, &sizes),
        Command::Solve { problem, solver, out, trace } => cmd_solve(&problem, &solver, out.as_deref(), trace.as_deref()),
        Command::Bench { manifest, solver, csv, summary, jobs } => {
            cmd_bench(&manifest, &solver, &csv, summary.as_deref(), jobs)
        }
        Command::Task { kind, seed, out, no_control_bounds } => cmd_task(kind, seed, &out, !no_control_bounds),
        Command::Sqp { task, solver, sqp_eps, sqp_max_iter, hessian, out } => {
            cmd_sqp(&task, &solver, sqp_eps, sqp_max_iter, hessian, out.as_deref())
        }
        Command::Certify { losses, kl, weights, delta, delta_prime, c } => {
            cmd_certify(&losses, kl, weights.as_deref(), delta, delta_prime, c)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
