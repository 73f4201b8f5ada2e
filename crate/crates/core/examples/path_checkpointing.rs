//! Forward paths under a memory budget.
//!
//! With full storage every level is kept. With checkpointing only every
//! `stride`-th level is kept and the others are re-simulated from the
//! counter-based noise on the way back; the levels are bitwise identical.
//!
//! ```bash
//! cargo run --release --example path_checkpointing
//! ```

use fbsde_llr::forward::plan_storage;
use fbsde_llr::{
    builtin_problem, run, simulate_paths_with, BackwardCursor, ProblemParams, SolverConfig,
    StorageRequest,
};

fn main() -> fbsde_llr::Result<()> {
    let (n, m, d) = (400, 100, 50);
    let problem = builtin_problem("allen_cahn_dw", d, &ProblemParams::new())?;
    let config = SolverConfig::default().with_steps(n).with_particles(m);

    let full = simulate_paths_with(&problem, &config, StorageRequest::Full)?;
    let ckpt = simulate_paths_with(&problem, &config, StorageRequest::Checkpointed { stride: 20 })?;
    println!("full store:         {:>9} floats", full.stored_scalars());
    println!("checkpointed store: {:>9} floats ({:?})", ckpt.stored_scalars(), ckpt.mode());

    let mut a = BackwardCursor::new(&full, &problem);
    let mut b = BackwardCursor::new(&ckpt, &problem);
    let mut identical = true;
    for k in (0..=n).rev() {
        let la = a.level(k)?.positions.clone();
        identical &= la == b.level(k)?.positions;
    }
    println!("levels identical walking backwards: {identical}");

    // the solver picks the layout from the budget
    let level_bytes = (m * d * 8) as u64;
    let mut tight = config.clone();
    tight.memory_budget_bytes = 60 * level_bytes;
    let plan = plan_storage(n, m, d, tight.memory_budget_bytes, None)?;
    println!("plan under a 60-level budget: {:?}", plan.mode);
    let (r_full, r_tight) = (run(&problem, &config)?, run(&problem, &tight)?);
    println!(
        "Y0 full {:.16e}, Y0 checkpointed {:.16e}, stride {:?}",
        r_full.y0, r_tight.y0, r_tight.checkpoint_stride
    );
    Ok(())
}
