//! Counter-based noise: the increment for particle `j` at level `k` is a
//! pure function of `(seed, j, k)`, so it can be drawn in any order.
//!
//! ```bash
//! cargo run --release --example rng_streams
//! ```

use fbsde_llr::forward::{gaussian_block, RngStreamKey};

fn main() {
    let (seed, d, dt) = (42, 4, 0.01);
    let forward: Vec<Vec<f64>> = (0..5).map(|k| gaussian_block(RngStreamKey::new(seed, 7, k), d, dt)).collect();
    let backward: Vec<Vec<f64>> = (0..5).rev().map(|k| gaussian_block(RngStreamKey::new(seed, 7, k), d, dt)).collect();
    for (k, w) in forward.iter().enumerate() {
        println!("k={k} ΔW={w:+.5?}");
    }
    let same = forward.iter().zip(backward.iter().rev()).all(|(a, b)| a == b);
    println!("forward and backward draws agree: {same}");
}
