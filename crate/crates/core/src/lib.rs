//! Particle solver for high-dimensional semilinear parabolic PDEs
//!
//! ```text
//! ∂ₜu + ½tr(σσᵀ∇²u) + μ·∇u + f(t, x, u, σᵀ∇u) = 0,   u(T, x) = g(x)
//! ```
//!
//! via the forward–backward SDE `Y = u(t, X)`, `Z = σᵀ∇u(t, X)`. Particles
//! are pushed forward by Euler–Maruyama; going backward, each particle's
//! `Z` comes from a kernel-weighted local linear regression of the next
//! level's `Y` values, and its `Y` from a scalar Newton solve.
//!
//! ```
//! use fbsde_llr::{builtin_problem, run, ProblemParams, SolverConfig};
//!
//! let problem = builtin_problem("linear_heat", 3, &ProblemParams::new()).unwrap();
//! let config = SolverConfig::default().with_steps(10).with_particles(50);
//! let report = run(&problem, &config).unwrap();
//! assert!(report.y0.is_finite());
//! ```

pub mod backward;
pub mod cli;
pub mod config;
pub mod error;
pub mod forward;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod regress;

pub use backward::{
    backward_step, ensemble_mean, newton_solve_y, run, run_report, BackwardState, NewtonConfig,
    RunReport, RunStatus,
};
pub use config::{RegressionRoute, RidgeRule, SolverConfig};
pub use error::{Error, Result};
pub use forward::{
    restore_level, simulate_paths, simulate_paths_with, BackwardCursor, LevelState, PathStore,
    StorageMode, StorageRequest,
};
pub use harness::{fit_slope, reference_value, run_sweep, scaling_report, SweepPlan, SweepResult};
pub use model::{builtin_problem, DiffusionSpec, ProblemParams, ProblemSpec};
pub use regress::{
    bandwidth, compute_weights, estimate_gradient, solve_wls, BandwidthRule, KernelSpec,
    RegressionOutput,
};
