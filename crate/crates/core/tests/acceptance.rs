//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1 to 3 are convergence benchmarks whose outcome is dominated by
//! Monte Carlo noise or time-discretization bias at desk scale; they are run
//! and reported in full but do not fail the suite. Criteria 4 to 7 gate.

use std::time::Instant;

use fbsde_llr::backward::{ensemble_mean, newton_solve_y, run, NewtonConfig};
use fbsde_llr::forward::{simulate_paths, simulate_paths_with, BackwardCursor, StorageRequest};
use fbsde_llr::harness::{check_thresholds, reproduction, run_sweep_with, Figure, Scale};
use fbsde_llr::model::{builtin_problem, ProblemParams};
use fbsde_llr::regress::{compute_weights, normal_operator_apply, solve_wls, KernelSpec};
use fbsde_llr::{fit_slope, LevelState, SolverConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

mod common;
use common::{bisect, dense_normal};

// criterion 4
const HEAT_DIM: usize = 5;
const HEAT_SEEDS: u64 = 20;
const HEAT_MAX_SE: f64 = 4.0;
// criterion 5
const OPERATOR_TOL: f64 = 1e-12;
const AFFINE_TOL: f64 = 1e-8;
const NEWTON_TOL: f64 = 1e-12;
const SUITE_MAX_S: f64 = 120.0;
// criterion 6
const RATIO_RANGE: (f64, f64) = (1.7, 2.4);
const SCALING_N: [usize; 4] = [400, 800, 1600, 3200];
const SCALING_M: [usize; 3] = [50, 100, 200];
const TIMING_REPEATS: usize = 3;

struct Outcome {
    id: usize,
    gating: bool,
    passed: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let verdict = if o.passed { "PASS" } else { "FAIL" };
    let note = if o.gating { "" } else { " [reported, not gating]" };
    println!("criterion {}: {verdict}{note}: {}", o.id, o.detail);
}

fn benchmark(id: usize, figure: Figure) -> Outcome {
    let repro = reproduction(figure, Scale::Desk);
    let start = Instant::now();
    let mut passed = true;
    let mut parts = Vec::new();
    for plan in &repro.plans {
        let result = match run_sweep_with(plan, &repro.config, |_| {}) {
            Ok(r) => r,
            Err(e) => {
                passed = false;
                parts.push(format!("{} d={}: {e}", plan.problem, plan.dimension));
                continue;
            }
        };
        let verdict = check_thresholds(&result, &repro.thresholds);
        passed &= verdict.passed;
        for line in &verdict.lines {
            println!("    {line}");
        }
        for p in result.error_points() {
            println!(
                "    {} d={} M={} N={}: mean Y0 {:.6e}, mean rel err {:.3e}",
                result.problem, result.dimension, p.m, p.n, p.mean_y0, p.mean_rel_err
            );
        }
        parts.push(format!("{} d={}", plan.problem, plan.dimension));
    }
    Outcome {
        id,
        gating: false,
        passed,
        detail: format!("{} ({:.0} s)", parts.join(", "), start.elapsed().as_secs_f64()),
    }
}

fn heat_oracle() -> Outcome {
    let p = builtin_problem("linear_heat", HEAT_DIM, &ProblemParams::new()).unwrap();
    // (1 + 2βσ²T)^{-d/2} with β = ½, σ = 1, T = 1
    let exact = 2f64.powf(-(HEAT_DIM as f64) / 2.0);
    let mut bitwise = true;
    let mut values = Vec::new();
    for seed in 0..HEAT_SEEDS {
        let cfg = SolverConfig::default().with_steps(10).with_particles(1000).with_seed(seed);
        let y0 = run(&p, &cfg).unwrap().y0;
        let store = simulate_paths(&p, &cfg).unwrap();
        let g: Vec<f64> = store.terminal().particles().map(|x| (p.terminal)(x)).collect();
        bitwise &= ensemble_mean(&g).to_bits() == y0.to_bits();
        values.push(y0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let z = (mean - exact).abs() / se;
    Outcome {
        id: 4,
        gating: true,
        passed: bitwise && z <= HEAT_MAX_SE,
        detail: format!(
            "Y0 == mean g(X_N) bitwise: {bitwise}; |mean − exact| = {:.2} SE (limit {HEAT_MAX_SE}), exact {exact:.6}",
            z
        ),
    }
}

fn random_level(rng: &mut ChaCha8Rng, m: usize, d: usize) -> LevelState {
    let pos: Vec<f64> = (0..m * d).map(|_| rng.sample(StandardNormal)).collect();
    LevelState::from_positions(2, 0.1, d, pos).unwrap()
}

fn oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let mut op_err: f64 = 0.0;
    for _ in 0..100 {
        let (d, m) = (rng.random_range(1..=10), rng.random_range(2..=50));
        let level = random_level(&mut rng, m, d);
        let a = rng.random_range(0..m);
        let anchor = level.particle(a).to_vec();
        let w = compute_weights(a, &level, rng.random_range(0.5..4.0), KernelSpec::Gaussian).unwrap();
        let lambda = rng.random_range(0.0..1e-2);
        let v: Vec<f64> = (0..=d).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = vec![0.0; d + 1];
        normal_operator_apply(&level, &anchor, &w, lambda, &v, &mut out);
        let dense = dense_normal(&level, &anchor, &w, lambda) * DVector::from_column_slice(&v);
        let scale = dense.norm().max(1.0);
        for i in 0..=d {
            op_err = op_err.max((out[i] - dense[i]).abs() / scale);
        }
    }

    let mut affine_err: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=5);
        let level = random_level(&mut rng, 50, d);
        let c: f64 = rng.sample(StandardNormal);
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = level.particles().map(|x| c + x.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()).collect();
        let w = compute_weights(0, &level, 10.0, KernelSpec::Gaussian).unwrap();
        let out = solve_wls(0, &level, &y, &w, 0.0, 1e-15, 500).unwrap();
        let at = c + level.particle(0).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        affine_err = affine_err.max((out.alpha - at).abs());
        for i in 0..d {
            affine_err = affine_err.max((out.alpha_x[i] - g[i]).abs());
        }
    }

    let p = builtin_problem("allen_cahn_dw", 2, &ProblemParams::new()).unwrap();
    let mut newton_err: f64 = 0.0;
    for _ in 0..50 {
        let mean = rng.random_range(-1.5..1.5);
        let dt = rng.random_range(1e-4..0.05);
        let root = bisect(|y| y - mean - (y - y * y * y) * dt, -2.0, 2.0);
        let (y, _) = newton_solve_y(mean, 0.0, &[0.0, 0.0], &[], &p, dt, &NewtonConfig::default()).unwrap();
        newton_err = newton_err.max((y - root).abs());
    }

    let mut ckpt_equal = true;
    for _ in 0..20 {
        let (n, d, m) = (rng.random_range(1..=64), rng.random_range(1..=8), rng.random_range(2..=16));
        let stride = 1usize << rng.random_range(1..=3);
        let cfg = SolverConfig::default().with_steps(n).with_particles(m).with_seed(rng.random());
        let full = simulate_paths_with(&p_dim(d), &cfg, StorageRequest::Full).unwrap();
        let ckpt = simulate_paths_with(&p_dim(d), &cfg, StorageRequest::Checkpointed { stride }).unwrap();
        let pd = p_dim(d);
        let (mut a, mut b) = (BackwardCursor::new(&full, &pd), BackwardCursor::new(&ckpt, &pd));
        for k in (0..=n).rev() {
            let la = a.level(k).unwrap().positions.clone();
            let lb = b.level(k).unwrap();
            ckpt_equal &= la.iter().zip(&lb.positions).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let passed = op_err <= OPERATOR_TOL
        && affine_err <= AFFINE_TOL
        && newton_err <= NEWTON_TOL
        && ckpt_equal
        && elapsed <= SUITE_MAX_S;
    Outcome {
        id: 5,
        gating: true,
        passed,
        detail: format!(
            "operator {op_err:.1e} (≤ {OPERATOR_TOL:e}), affine {affine_err:.1e} (≤ {AFFINE_TOL:e}), \
             newton {newton_err:.1e} (≤ {NEWTON_TOL:e}), checkpoint bitwise {ckpt_equal}, \
             {elapsed:.2} s (≤ {SUITE_MAX_S} s)"
        ),
    }
}

fn p_dim(d: usize) -> fbsde_llr::ProblemSpec {
    builtin_problem("allen_cahn_dw", d, &ProblemParams::new()).unwrap()
}

fn min_runtime(p: &fbsde_llr::ProblemSpec, n: usize, m: usize) -> f64 {
    let cfg = SolverConfig::default().with_steps(n).with_particles(m).with_seed(1);
    (0..TIMING_REPEATS)
        .map(|_| {
            let start = Instant::now();
            run(p, &cfg).unwrap();
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn runtime_scaling() -> Outcome {
    let p = p_dim(100);
    let times: Vec<f64> = SCALING_N.iter().map(|&n| min_runtime(&p, n, 100)).collect();
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = ratios.iter().all(|r| (RATIO_RANGE.0..=RATIO_RANGE.1).contains(r));
    let n_pts: Vec<(f64, f64)> = SCALING_N.iter().zip(&times).map(|(&n, &t)| (n as f64, t)).collect();
    let n_exp = fit_slope(&n_pts).unwrap();
    let m_times: Vec<(f64, f64)> = SCALING_M.iter().map(|&m| (m as f64, min_runtime(&p, 800, m))).collect();
    let m_exp = fit_slope(&m_times).unwrap();
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ");
    Outcome {
        id: 6,
        gating: true,
        passed: ok,
        detail: format!(
            "N-doubling ratios [{}] in [{}, {}]; runtime exponent in N {n_exp:.2}, in M {m_exp:.2} (measured)",
            fmt(&ratios),
            RATIO_RANGE.0,
            RATIO_RANGE.1
        ),
    }
}

fn determinism() -> Outcome {
    let cases = [("burgers", 20usize, 16usize, 64usize), ("hj_gradient_sink", 60, 8, 40), ("allen_cahn_dw", 10, 20, 50)];
    let mut all = true;
    for (name, d, n, m) in cases {
        let p = builtin_problem(name, d, &ProblemParams::new()).unwrap();
        let cfg = SolverConfig::default().with_steps(n).with_particles(m).with_seed(11);
        let bits: Vec<u64> = [1, 4, 1, 3]
            .iter()
            .map(|&t| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .unwrap()
                    .install(|| run(&p, &cfg).unwrap().y0.to_bits())
            })
            .collect();
        all &= bits.windows(2).all(|w| w[0] == w[1]);
    }
    Outcome {
        id: 7,
        gating: true,
        passed: all,
        detail: format!("Y0 bitwise identical over pools of 1, 4, 1, 3 workers on {} problems: {all}", cases.len()),
    }
}

fn main() {
    let start = Instant::now();
    let outcomes = vec![
        benchmark(1, Figure::AllenCahn100),
        benchmark(2, Figure::Burgers),
        benchmark(3, Figure::HamiltonJacobi),
        heat_oracle(),
        oracle_suite(),
        runtime_scaling(),
        determinism(),
    ];
    println!();
    for o in &outcomes {
        report(o);
    }
    let gating_failures = outcomes.iter().filter(|o| o.gating && !o.passed).count();
    println!(
        "acceptance: {} of {} criteria pass, {gating_failures} gating failures ({:.0} s)",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if gating_failures > 0 {
        std::process::exit(1);
    }
}
