//! A small convergence study: seed-averaged error against `Δt` and the
//! fitted log-log slope.
//!
//! ```bash
//! cargo run --release --example convergence_sweep
//! ```

use fbsde_llr::harness::run_sweep_with;
use fbsde_llr::{SolverConfig, SweepPlan};

fn main() -> fbsde_llr::Result<()> {
    let mut plan = SweepPlan::new("allen_cahn_log", 20);
    plan.n_values = vec![25, 50, 100, 200];
    plan.m_values = vec![100];
    plan.seeds_per_cell = 4;
    let result = run_sweep_with(&plan, &SolverConfig::default(), |r| {
        eprintln!("  N={:4} seed={} Y0={:.6}", r.n_steps, r.seed, r.y0);
    })?;
    println!("{:>6} {:>10} {:>12} {:>12}", "N", "dt", "mean Y0", "mean |err|");
    for p in result.error_points() {
        println!("{:>6} {:>10.5} {:>12.6} {:>12.3e}", p.n, p.dt, p.mean_y0, p.mean_abs_err);
    }
    for (m, slope) in &result.slopes {
        match slope {
            Some(s) => println!("M={m}: slope {s:.2}"),
            None => println!("M={m}: no slope"),
        }
    }
    Ok(())
}
