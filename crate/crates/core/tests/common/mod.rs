//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use fbsde_llr::LevelState;
use nalgebra::{DMatrix, DVector};

/// Design matrix `[1 | Xⱼ − a]` as a dense `M × (d+1)` matrix.
pub fn design(level: &LevelState, anchor: &[f64]) -> DMatrix<f64> {
    let d = level.dim;
    DMatrix::from_fn(level.n_particles, d + 1, |j, c| {
        if c == 0 {
            1.0
        } else {
            level.particle(j)[c - 1] - anchor[c - 1]
        }
    })
}

pub fn dense_normal(level: &LevelState, anchor: &[f64], w: &[f64], lambda: f64) -> DMatrix<f64> {
    let dm = design(level, anchor);
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    dm.transpose() * wm * &dm + DMatrix::identity(level.dim + 1, level.dim + 1) * lambda
}

pub fn dense_solve(level: &LevelState, m: usize, w: &[f64], y: &[f64], lambda: f64) -> DVector<f64> {
    let anchor = level.particle(m).to_vec();
    let a = dense_normal(level, &anchor, w, lambda);
    let dm = design(level, &anchor);
    let rhs = dm.transpose()
        * DMatrix::from_diagonal(&DVector::from_column_slice(w))
        * DVector::from_column_slice(y);
    a.cholesky().expect("SPD").solve(&rhs)
}

pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) < 0.0 && f(hi) > 0.0);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
