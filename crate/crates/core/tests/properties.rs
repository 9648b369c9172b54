use std::path::PathBuf;

use proptest::prelude::*;

use flexqp::io::{problem_from_json, problem_to_json};
use flexqp::linsys::ldl::Symbolic;
use flexqp::policy::load_weights;
use flexqp::probgen::{generate, GenSpec, ProblemClass, SplitMix64};
use flexqp::solver::{soft_threshold, solve_observed, SolverParams};
use flexqp::{CscMatrix, ParamDefaults, ParamPolicy, QpProblem, SolveSettings};

/// Dense random QP with `m` inequalities; with `infeasible` the first two
/// rows are made to contradict each other.
fn random_qp(seed: u64, n: usize, m: usize, p: usize, infeasible: bool) -> QpProblem {
    let mut rng = SplitMix64::new(seed);
    let f = rng.normal_matrix(n, n);
    let mut pm = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pm[i * n + j] = (0..n).map(|k| f[k * n + i] * f[k * n + j]).sum::<f64>() / n as f64;
        }
        pm[i * n + i] += 0.1;
    }
    let mut g = rng.normal_matrix(m, n);
    let mut h: Vec<f64> = (0..m).map(|_| rng.uniform_in(0.1, 1.0)).collect();
    if infeasible && m >= 2 {
        for j in 0..n {
            g[n + j] = -g[j];
        }
        h[0] = -1.0;
        h[1] = -1.0;
    }
    let a = rng.normal_matrix(p, n);
    let b = rng.normal_vec(p);
    QpProblem::new(
        CscMatrix::from_dense(n, n, &pm).upper_triangle(),
        rng.normal_vec(n),
        CscMatrix::from_dense(m, n, &g),
        h,
        CscMatrix::from_dense(p, n, &a),
        b,
    )
    .unwrap()
}

fn params_in_range(p: &SolverParams) -> bool {
    let r = 1e-6..=1e6;
    p.mu_i.iter().chain(&p.mu_e).chain(&p.sigma_s).chain(&p.rho_i).chain(&p.rho_e).all(|v| r.contains(v))
        && r.contains(&p.sigma_x)
        && p.alpha > 0.0
        && p.alpha < 2.0
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn multipliers_stay_inside_the_penalty_box(
        seed in any::<u64>(),
        infeasible in any::<bool>(),
        adaptive in any::<bool>(),
        mu in 0.1f64..50.0,
    ) {
        let prob = random_qp(seed, 6, 5, 2, infeasible);
        let policy = if adaptive {
            ParamPolicy::adaptive()
        } else {
            ParamPolicy::fixed(ParamDefaults::default().with_mu(mu))
        };
        let settings = SolveSettings { policy, max_iter: 300, ..Default::default() };
        let mut worst = 0.0f64;
        solve_observed(&prob, &settings, None, |v| {
            if let Some(p) = v.params {
                for (y, m) in v.state.y_i.iter().zip(&p.mu_i).chain(v.state.y_e.iter().zip(&p.mu_e)) {
                    worst = worst.max(y.abs() - m);
                }
                assert!(params_in_range(p));
            }
        })
        .unwrap();
        prop_assert!(worst <= 1e-9, "|y| exceeded mu by {worst:e}");
    }

    #[test]
    fn soft_threshold_shrinks_towards_zero(v in prop::collection::vec(-1e3f64..1e3, 1..30), k in 0.0f64..100.0) {
        let s = soft_threshold(&v, &[k]).unwrap();
        for (a, b) in v.iter().zip(&s) {
            prop_assert!(b.abs() <= a.abs());
            prop_assert!(*b == 0.0 || b.signum() == a.signum());
            prop_assert!((a.abs() <= k) == (*b == 0.0));
            prop_assert!((a - b).abs() <= k + 1e-12);
        }
    }

    #[test]
    fn soft_threshold_is_nonexpansive(a in -50f64..50.0, b in -50f64..50.0, k in 0.0f64..10.0) {
        let s = soft_threshold(&[a, b], &[k]).unwrap();
        prop_assert!((s[0] - s[1]).abs() <= (a - b).abs() + 1e-12);
    }

    #[test]
    fn problem_json_round_trips_bit_for_bit(class_idx in 0usize..9, seed in 0u64..1000) {
        let class = ProblemClass::ALL[class_idx];
        let spec = match class {
            // keep the larger classes small for speed
            ProblemClass::RandomQP | ProblemClass::RandomQPEq => GenSpec::new(class, seed).with_size("n", 15),
            _ => GenSpec::new(class, seed),
        };
        let prob = generate(&spec).unwrap();
        let s = problem_to_json(&prob);
        let back = problem_from_json(&s).unwrap();
        prop_assert_eq!(problem_to_json(&back), s);
        prop_assert_eq!(back.dims(), prob.dims());
        prop_assert!(back.q().iter().zip(prob.q()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(back.h().iter().zip(prob.h()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn ldl_solves_quasi_definite_systems(seed in any::<u64>(), n in 1usize..25, p in 0usize..12, rho in 1e-4f64..1e2) {
        let mut rng = SplitMix64::new(seed);
        let dim = n + p;
        let mut k = vec![0.0; dim * dim];
        for i in 0..n {
            for j in i..n {
                let v = if i == j { rng.uniform_in(0.5, 3.0) } else if rng.bernoulli(0.3) { 0.2 * rng.normal() } else { 0.0 };
                k[i * dim + j] = v;
                k[j * dim + i] = v;
            }
        }
        for r in 0..p {
            for j in 0..n {
                if rng.bernoulli(0.5) {
                    let v = rng.normal();
                    k[(n + r) * dim + j] = v;
                    k[j * dim + n + r] = v;
                }
            }
            k[(n + r) * dim + n + r] = -1.0 / rho;
        }
        let upper = CscMatrix::from_dense(dim, dim, &k).upper_triangle();
        let sym = Symbolic::analyze(&upper);
        let num = sym.factor(&upper).unwrap();
        prop_assert_eq!(num.negative_pivots(), p);
        let rhs = rng.normal_vec(dim);
        let x = sym.solve(&num, &rhs);
        let kx = upper.sym_upper_mul_vec(&x);
        let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs())) * k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let res = kx.iter().zip(&rhs).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        prop_assert!(res <= 1e-9 * scale, "residual {res:e}");
    }
}

/// Permuting the inequality rows permutes the learned per-constraint
/// parameters and the multipliers the same way.
#[test]
fn learned_policy_is_permutation_equivariant() {
    let w = load_weights(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/policy_weights.json")).unwrap();
    let policy = ParamPolicy::learned(w);
    for seed in 0..5u64 {
        let prob = random_qp(seed, 8, 7, 2, seed % 2 == 1);
        let m = prob.m();
        let mut rng = SplitMix64::new(seed + 100);
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
        }
        let permuted = QpProblem::new(
            prob.cost_matrix().clone(),
            prob.q().to_vec(),
            prob.g().permute_rows(&perm),
            perm.iter().map(|&i| prob.h()[i]).collect(),
            prob.a().clone(),
            prob.b().to_vec(),
        )
        .unwrap();
        let settings = SolveSettings { policy: policy.clone(), max_iter: 30, eps_abs: 1e-12, ..Default::default() };
        let run = |q: &QpProblem| {
            let mut out = Vec::new();
            solve_observed(q, &settings, None, |v| {
                if let Some(p) = v.params {
                    out.push((p.clone(), v.state.y_i.clone()));
                }
            })
            .unwrap();
            out
        };
        let (a, b) = (run(&prob), run(&permuted));
        assert_eq!(a.len(), b.len());
        for ((pa, ya), (pb, yb)) in a.iter().zip(&b) {
            for (new, &old) in perm.iter().enumerate() {
                let close = |u: f64, v: f64| (u - v).abs() <= 1e-6 * (1.0 + u.abs());
                assert!(close(pa.mu_i[old], pb.mu_i[new]), "seed {seed}: mu");
                assert!(close(pa.rho_i[old], pb.rho_i[new]), "seed {seed}: rho");
                assert!(close(pa.sigma_s[old], pb.sigma_s[new]), "seed {seed}: sigma_s");
                assert!(close(ya[old], yb[new]), "seed {seed}: y");
            }
            assert!((pa.alpha - pb.alpha).abs() <= 1e-6);
        }
    }
}
