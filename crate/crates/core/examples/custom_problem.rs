//! Build a problem by hand: drift, diffusion, a gradient-dependent driver
//! and a terminal condition.
//!
//! The driver `f = −½‖z‖²` with `g(x) = log(½(1 + ‖x‖²))` has no closed form
//! here, so the example just compares two resolutions.
//!
//! ```bash
//! cargo run --release --example custom_problem
//! ```

use std::sync::Arc;

use fbsde_llr::model::Drift;
use fbsde_llr::{run, DiffusionSpec, ProblemSpec, SolverConfig};

fn main() -> fbsde_llr::Result<()> {
    let d = 10;
    let problem = ProblemSpec::new(
        "control",
        d,
        0.5,
        DiffusionSpec::isotropic(0.5f64.sqrt())?,
        Arc::new(|_t, _x, _y, z: &[f64]| -0.5 * z.iter().map(|v| v * v).sum::<f64>()),
        Arc::new(|x: &[f64]| (0.5 * (1.0 + x.iter().map(|v| v * v).sum::<f64>())).ln()),
    )
    // mean reversion towards the origin
    .with_drift(Drift::Field(Arc::new(|_t, x, out| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -0.2 * xi;
        }
    })))
    .with_driver_dy(Arc::new(|_, _, _, _| 0.0));

    for n in [50, 100] {
        let cfg = SolverConfig::default().with_steps(n).with_particles(200).with_seed(3);
        let r = run(&problem, &cfg)?;
        println!(
            "N={n:4}  Y0={:.6}  mean CG iters {:.1}  {:.2} s",
            r.y0, r.mean_cg_iters, r.runtime_s
        );
    }
    Ok(())
}
