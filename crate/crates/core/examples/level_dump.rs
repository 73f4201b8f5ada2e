//! Save one ensemble level to the binary dump format and read it back.
//!
//! ```bash
//! cargo run --release --example level_dump
//! ```

use fbsde_llr::forward::{read_level_dump, write_level_dump};
use fbsde_llr::{builtin_problem, simulate_paths, ProblemParams, SolverConfig};

fn main() -> fbsde_llr::Result<()> {
    let problem = builtin_problem("burgers", 8, &ProblemParams::new())?;
    let config = SolverConfig::default().with_steps(16).with_particles(32).with_seed(5);
    let store = simulate_paths(&problem, &config)?;
    let level = store.terminal();

    let mut bytes = Vec::new();
    write_level_dump(&mut bytes, level, config.seed).expect("write to memory");
    let dump = read_level_dump(bytes.as_slice()).expect("read from memory");
    println!("{} bytes: k={} M={} d={} seed={}", bytes.len(), dump.k, dump.n_particles, dump.dim, dump.seed);
    println!("positions round-trip: {}", dump.positions == level.positions);
    Ok(())
}
