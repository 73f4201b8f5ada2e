//! The implicit backward update `y = mean + f(t, x, y, z)·dt` solved by
//! damped Newton, for the double-well and the logarithmic potentials.
//!
//! ```bash
//! cargo run --release --example implicit_newton
//! ```

use fbsde_llr::{builtin_problem, newton_solve_y, NewtonConfig, ProblemParams};

fn main() -> fbsde_llr::Result<()> {
    let cfg = NewtonConfig::default();
    let dt = 0.01;
    for name in ["allen_cahn_dw", "allen_cahn_log"] {
        let p = builtin_problem(name, 2, &ProblemParams::new())?;
        println!("{name}");
        for mean in [-0.9, -0.3, 0.0, 0.3, 0.9] {
            let (y, iters) = newton_solve_y(mean, 0.0, &[0.0, 0.0], &[], &p, dt, &cfg)?;
            let residual = y - mean - (p.driver)(0.0, &[0.0, 0.0], y, &[]) * dt;
            println!("  mean {mean:+.2} -> y {y:+.12} in {iters} iterations, residual {residual:.1e}");
        }
    }
    Ok(())
}
