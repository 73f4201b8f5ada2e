//! Drive the solver from the same `key = value` text the CLI reads.
//!
//! ```bash
//! cargo run --release --example config_file
//! ```

use fbsde_llr::cli::parse_config_str;
use fbsde_llr::run;

const CONFIG: &str = "\
# Hamilton-Jacobi problem, small
problem = hj_gradient_sink
d = 20
N = 40
M = 80
bandwidth_rule = max_distance
regression_route = auto
";

fn main() -> fbsde_llr::Result<()> {
    let cfg = parse_config_str(CONFIG, &["seed=9".to_string()])?;
    let problem = cfg.build_problem()?;
    let report = run(&problem, &cfg.solver_config())?;
    println!("Y0 = {:.6} (reference {:?})", report.y0, report.reference);
    println!("canonical config:\n{}", cfg.to_config_string());
    Ok(())
}
