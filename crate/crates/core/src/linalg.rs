//! Small dense kernels shared by the solver modules.

// The kernels below are compiled twice: once for the baseline target and
// once with AVX2 enabled, picked at runtime. FMA is deliberately not enabled,
// so both builds perform the same roundings and agree bitwise.

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    reduce8(acc) + tail
}

#[inline(always)]
fn dot_diff_body(x: &[f64], a: &[f64], v: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (cx, ca, cv) = (x.chunks_exact(8), a.chunks_exact(8), v.chunks_exact(8));
    let (tx, ta, tv) = (cx.remainder(), ca.remainder(), cv.remainder());
    for ((x, a), v) in cx.zip(ca).zip(cv) {
        for l in 0..8 {
            acc[l] += (x[l] - a[l]) * v[l];
        }
    }
    let mut tail = 0.0;
    for ((x, a), v) in tx.iter().zip(ta).zip(tv) {
        tail += (x - a) * v;
    }
    reduce8(acc) + tail
}

#[cfg(target_arch = "x86_64")]
mod wide {
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        super::dot_body(a, b)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn dot_diff(x: &[f64], a: &[f64], v: &[f64]) -> f64 {
        super::dot_diff_body(x, a, v)
    }
}

#[inline]
fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::dot(a, b) };
    }
    dot_body(a, b)
}

/// `Σᵢ (xᵢ − aᵢ)·vᵢ` without forming `x − a`.
#[inline]
pub fn dot_diff(x: &[f64], a: &[f64], v: &[f64]) -> f64 {
    assert!(x.len() == a.len() && x.len() == v.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::dot_diff(x, a, v) };
    }
    dot_diff_body(x, a, v)
}

#[inline]
fn reduce8(acc: [f64; 8]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        let d0 = a[i] - b[i];
        let d1 = a[i + 1] - b[i + 1];
        let d2 = a[i + 2] - b[i + 2];
        let d3 = a[i + 3] - b[i + 3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        let t = a[i] - b[i];
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Pairwise (tree) summation. The split points depend only on the length, so
/// the result is independent of how the caller produced the slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Rank of a square row-major matrix by Gaussian elimination with partial
/// pivoting. Pivots below `tol * max|a_ij|` count as zero.
pub fn matrix_rank(n: usize, data: &[f64], tol: f64) -> usize {
    let mut a = data.to_vec();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    let mut row = 0;
    for col in 0..n {
        if row == n {
            break;
        }
        let (piv, pval) = (row..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((row, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= tol * scale {
            continue;
        }
        if piv != row {
            for c in 0..n {
                a.swap(piv * n + c, row * n + c);
            }
        }
        let p = a[row * n + col];
        for r in row + 1..n {
            let factor = a[r * n + col] / p;
            if factor != 0.0 {
                for c in col..n {
                    a[r * n + c] -= factor * a[row * n + c];
                }
            }
        }
        row += 1;
        rank += 1;
    }
    rank
}
