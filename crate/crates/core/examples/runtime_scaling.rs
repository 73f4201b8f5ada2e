//! Wall-clock runtime against `N` and `M`, with fitted exponents.
//!
//! ```bash
//! cargo run --release --example runtime_scaling
//! ```

use fbsde_llr::{builtin_problem, scaling_report, ProblemParams, SolverConfig};

fn main() -> fbsde_llr::Result<()> {
    let problem = builtin_problem("burgers", 20, &ProblemParams::new())?;
    let report = scaling_report(&problem, &SolverConfig::default(), &[20, 40, 80], &[50, 100, 200]);
    for c in &report.cells {
        println!("N={:4} M={:4} {:8.3} s  {}", c.n, c.m, c.runtime_s, c.status.label());
    }
    for (m, e) in &report.n_exponents {
        println!("M={m}: runtime ~ N^{e:.2}");
    }
    for (n, e) in &report.m_exponents {
        println!("N={n}: runtime ~ M^{e:.2}");
    }
    Ok(())
}
