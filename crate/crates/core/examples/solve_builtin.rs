//! Solve one of the built-in problems and print the run report.
//!
//! ```bash
//! cargo run --release --example solve_builtin
//! cargo run --release --example solve_builtin -- burgers 50 200 100
//! ```
//!
//! Arguments: `problem d N M` (defaults `allen_cahn_dw 100 400 100`).

use fbsde_llr::{builtin_problem, run, ProblemParams, SolverConfig};

fn main() -> fbsde_llr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let name = arg(0, "allen_cahn_dw");
    let d: usize = arg(1, "100").parse().expect("d");
    let n: usize = arg(2, "400").parse().expect("N");
    let m: usize = arg(3, "100").parse().expect("M");

    let problem = builtin_problem(&name, d, &ProblemParams::new())?;
    let config = SolverConfig::default().with_steps(n).with_particles(m).with_seed(1);
    let report = run(&problem, &config)?;
    print!("{}", report.to_key_value());
    if let Some(err) = report.rel_err() {
        println!("relative error {:.3}%", 100.0 * err);
    }
    Ok(())
}
