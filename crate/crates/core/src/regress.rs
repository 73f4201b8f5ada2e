//! Kernel-weighted local linear regression for the gradient of `u`.
//!
//! For an anchor `a` (normally particle `m` of the current level) and
//! displacements `Dⱼ = Xⱼ − a`, the coefficients `(α, α_x)` minimize
//!
//! ```text
//! Σⱼ wⱼ (Yⱼ − α − α_xᵀDⱼ)² + λ(α² + ‖α_x‖²)
//! ```
//!
//! with normalized kernel weights `wⱼ ∝ K(‖Dⱼ‖/ε)`. The normal equations
//! `(𝐃ᵀW𝐃 + λI)α = 𝐃ᵀWY` are solved by conjugate gradients without ever
//! forming `𝐃ᵀW𝐃`. Two equivalent routes exist:
//!
//! * primal: CG in `R^{d+1}`, each operator application costs O(M·d);
//! * dual: CG on `W^{½}𝐃𝐃ᵀW^{½} + λI` in `R^M` using a per-level Gram matrix
//!   of the particles, then `α = 𝐃ᵀW^{½}s`. Cheaper when `M < 2d`.

use crate::config::{RidgeRule, SolverConfig};
use crate::error::{Error, Result};
use crate::forward::LevelState;
use crate::linalg::{dist_sq, dot, dot_diff, norm_sq};
use crate::model::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelSpec {
    /// `K(r) = e^{−r²}`
    #[default]
    Gaussian,
    /// `K(r) = max(0, 1 − r²)`
    Epanechnikov,
}

impl KernelSpec {
    #[inline]
    pub fn eval(self, r: f64) -> f64 {
        match self {
            KernelSpec::Gaussian => (-r * r).exp(),
            KernelSpec::Epanechnikov => (1.0 - r * r).max(0.0),
        }
    }

    /// Kernel as a function of `r²`.
    #[inline]
    fn eval_sq(self, r2: f64) -> f64 {
        match self {
            KernelSpec::Gaussian => (-r2).exp(),
            KernelSpec::Epanechnikov => (1.0 - r2).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// Largest distance from the anchor to any particle.
    MaxDistance,
    /// `c·√Δt`
    ScaledSqrtDt(f64),
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::MaxDistance
    }
}

impl BandwidthRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthRule::MaxDistance => Ok(()),
            BandwidthRule::ScaledSqrtDt(c) | BandwidthRule::Fixed(c) => {
                if c.is_finite() && c > 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!("bandwidth constant must be positive, got {c}")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRoute {
    Primal,
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOutput {
    /// Intercept; absorbs `u + ∂ₜu·Δt`. Not used downstream.
    pub alpha: f64,
    /// Gradient estimate `∇u` at the anchor.
    pub alpha_x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
    /// Number of weights above `1e-12`.
    pub effective_weight_count: f64,
    pub lambda: f64,
    pub route: SolveRoute,
}

/// `‖Xⱼ − a‖²` for every particle.
pub fn distances_sq(level: &LevelState, anchor: &[f64]) -> Vec<f64> {
    level.particles().map(|x| dist_sq(x, anchor)).collect()
}

/// Normalized weights `K(‖Dⱼ‖/ε) / Σᵢ K(‖Dᵢ‖/ε)` around particle `m`.
pub fn compute_weights(m: usize, level: &LevelState, eps: f64, kernel: KernelSpec) -> Result<Vec<f64>> {
    check_anchor(m, level)?;
    weights_from_distances(m, &distances_sq(level, level.particle(m)), eps, kernel)
}

pub(crate) fn weights_from_distances(
    anchor: usize,
    dist_sq: &[f64],
    eps: f64,
    kernel: KernelSpec,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {eps}")));
    }
    if dist_sq.len() < 2 {
        return Err(Error::invalid("need at least two particles"));
    }
    let inv = 1.0 / (eps * eps);
    let mut w: Vec<f64> = dist_sq.iter().map(|r2| kernel.eval_sq(r2 * inv)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateNeighborhood {
            anchor,
            reason: "every kernel weight is zero".into(),
        });
    }
    for wi in &mut w {
        *wi /= total;
    }
    Ok(w)
}

/// Kernel bandwidth `ε` for particle `m`.
pub fn bandwidth(m: usize, level: &LevelState, rule: BandwidthRule, dt: f64) -> Result<f64> {
    check_anchor(m, level)?;
    match rule {
        BandwidthRule::MaxDistance => {
            bandwidth_from_distances(m, &distances_sq(level, level.particle(m)), rule, dt)
        }
        _ => bandwidth_from_distances(m, &[], rule, dt),
    }
}

pub(crate) fn bandwidth_from_distances(
    anchor: usize,
    dist_sq: &[f64],
    rule: BandwidthRule,
    dt: f64,
) -> Result<f64> {
    match rule {
        BandwidthRule::MaxDistance => {
            let max = dist_sq.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt();
            if max > 0.0 {
                Ok(max)
            } else {
                Err(Error::DegenerateNeighborhood {
                    anchor,
                    reason: "all particles coincide".into(),
                })
            }
        }
        BandwidthRule::ScaledSqrtDt(c) => Ok(c * dt.sqrt()),
        BandwidthRule::Fixed(eps) => Ok(eps),
    }
}

fn check_anchor(m: usize, level: &LevelState) -> Result<()> {
    if level.n_particles < 2 {
        return Err(Error::invalid("need at least two particles"));
    }
    if m >= level.n_particles {
        return Err(Error::invalid(format!(
            "anchor {m} out of range for {} particles",
            level.n_particles
        )));
    }
    Ok(())
}

/// `out = (𝐃ᵀW𝐃 + λI)·v` with `𝐃 = [1 | Xⱼ − a]` applied implicitly.
///
/// Step 1 forms `βⱼ = wⱼ(v₀ + Dⱼᵀv_x)`, step 2 accumulates `Σβⱼ` and
/// `Σβⱼ Dⱼ`. Cost O(M·d).
pub fn normal_operator_apply(
    level: &LevelState,
    anchor: &[f64],
    weights: &[f64],
    lambda: f64,
    v: &[f64],
    out: &mut [f64],
) {
    let d = level.dim;
    debug_assert_eq!(v.len(), d + 1);
    debug_assert_eq!(out.len(), d + 1);
    let (v0, vx) = (v[0], &v[1..]);
    out.fill(0.0);
    let mut sum_beta = 0.0;
    for (x, w) in level.particles().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let beta = w * (v0 + dot_diff(x, anchor, vx));
        sum_beta += beta;
        let ox = &mut out[1..];
        for i in 0..d {
            ox[i] += beta * (x[i] - anchor[i]);
        }
    }
    out[0] = sum_beta + lambda * v0;
    for i in 0..d {
        out[i + 1] += lambda * vx[i];
    }
}

/// `𝐃ᵀWY`
fn normal_rhs(level: &LevelState, anchor: &[f64], weights: &[f64], responses: &[f64]) -> Vec<f64> {
    let d = level.dim;
    let mut b = vec![0.0; d + 1];
    for ((x, w), y) in level.particles().zip(weights).zip(responses) {
        let c = w * y;
        if c == 0.0 {
            continue;
        }
        b[0] += c;
        for i in 0..d {
            b[i + 1] += c * (x[i] - anchor[i]);
        }
    }
    b
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
}

/// Conjugate gradients for SPD `A`, started from zero, stopping when
/// `‖b − Ax‖ ≤ tol·‖b‖`. On hitting `maxiter` the iterate with the smallest
/// residual seen is returned with `converged = false`.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    maxiter: usize,
) -> CgResult {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = norm_sq(b).sqrt();
    if b_norm == 0.0 {
        return CgResult {
            x,
            iterations: 0,
            residual_norm: 0.0,
            initial_residual_norm: 0.0,
            converged: true,
        };
    }
    let target = tol * b_norm;
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = norm_sq(&r);
    let mut best = (rr.sqrt(), x.clone());
    let mut iterations = 0;
    while iterations < maxiter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        iterations += 1;
        let rr_new = norm_sq(&r);
        let res = rr_new.sqrt();
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= target {
            return CgResult {
                x,
                iterations,
                residual_norm: res,
                initial_residual_norm: b_norm,
                converged: true,
            };
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    CgResult {
        x: best.1,
        iterations,
        residual_norm: best.0,
        initial_residual_norm: b_norm,
        converged: best.0 <= target,
    }
}

fn check_responses(level: &LevelState, responses: &[f64], weights: &[f64]) -> Result<()> {
    if responses.len() != level.n_particles {
        return Err(Error::DimensionMismatch {
            expected: level.n_particles,
            got: responses.len(),
        });
    }
    if weights.len() != level.n_particles {
        return Err(Error::DimensionMismatch {
            expected: level.n_particles,
            got: weights.len(),
        });
    }
    if responses.iter().any(|y| y.is_nan()) {
        return Err(Error::invalid("responses contain NaN"));
    }
    Ok(())
}

fn effective_count(weights: &[f64]) -> f64 {
    weights.iter().filter(|w| **w > 1e-12).count() as f64
}

/// Weighted ridge least squares around particle `m`, primal CG route.
pub fn solve_wls(
    m: usize,
    level: &LevelState,
    responses: &[f64],
    weights: &[f64],
    lambda: f64,
    cg_tol: f64,
    cg_maxiter: usize,
) -> Result<RegressionOutput> {
    check_anchor(m, level)?;
    solve_wls_at(level.particle(m), level, responses, weights, lambda, cg_tol, cg_maxiter)
}

/// As [`solve_wls`] with an arbitrary anchor point.
pub fn solve_wls_at(
    anchor: &[f64],
    level: &LevelState,
    responses: &[f64],
    weights: &[f64],
    lambda: f64,
    cg_tol: f64,
    cg_maxiter: usize,
) -> Result<RegressionOutput> {
    check_responses(level, responses, weights)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let b = normal_rhs(level, anchor, weights, responses);
    let cg = conjugate_gradient(
        |v, out| normal_operator_apply(level, anchor, weights, lambda, v, out),
        &b,
        cg_tol,
        cg_maxiter,
    );
    Ok(RegressionOutput {
        alpha: cg.x[0],
        alpha_x: cg.x[1..].to_vec(),
        iterations: cg.iterations,
        residual_norm: cg.residual_norm,
        initial_residual_norm: cg.initial_residual_norm,
        converged: cg.converged,
        effective_weight_count: effective_count(weights),
        lambda,
        route: SolveRoute::Primal,
    })
}

/// Gram matrix of a level's particles, centered at the ensemble mean.
#[derive(Debug, Clone)]
pub struct LevelGram {
    n: usize,
    center: Vec<f64>,
    /// Row-major `M × M`
    gram: Vec<f64>,
}

impl LevelGram {
    pub fn new(level: &LevelState) -> Self {
        let (n, d) = (level.n_particles, level.dim);
        let mut center = vec![0.0; d];
        for x in level.particles() {
            for i in 0..d {
                center[i] += x[i];
            }
        }
        for c in &mut center {
            *c /= n as f64;
        }
        let centered: Vec<f64> = level
            .particles()
            .flat_map(|x| x.iter().zip(&center).map(|(a, c)| a - c))
            .collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            let xi = &centered[i * d..(i + 1) * d];
            for j in i..n {
                let v = dot(xi, &centered[j * d..(j + 1) * d]);
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        LevelGram { n, center, gram }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.gram[i * self.n..(i + 1) * self.n]
    }
}

/// Anchor-relative view of a [`LevelGram`]: `Ĝᵢⱼ = Dᵢ·Dⱼ = Gᵢⱼ − hᵢ − hⱼ + q`.
struct CenteredGram<'a> {
    gram: &'a LevelGram,
    h: Vec<f64>,
    q: f64,
}

impl<'a> CenteredGram<'a> {
    fn for_particle(gram: &'a LevelGram, m: usize) -> Self {
        CenteredGram {
            h: gram.row(m).to_vec(),
            q: gram.gram[m * gram.n + m],
            gram,
        }
    }

    fn for_point(gram: &'a LevelGram, level: &LevelState, anchor: &[f64]) -> Self {
        let shift: Vec<f64> = anchor.iter().zip(&gram.center).map(|(a, c)| a - c).collect();
        let h = level
            .particles()
            .map(|x| dot_diff(x, &gram.center, &shift))
            .collect();
        CenteredGram {
            h,
            q: norm_sq(&shift),
            gram,
        }
    }

    fn dist_sq(&self) -> Vec<f64> {
        (0..self.gram.n)
            .map(|i| (self.gram.gram[i * self.gram.n + i] - 2.0 * self.h[i] + self.q).max(0.0))
            .collect()
    }

    /// `out = (Ĝ + 11ᵀ)·u`
    fn apply_kernel(&self, u: &[f64], out: &mut [f64]) {
        let sum_u: f64 = u.iter().sum();
        let hu = dot(&self.h, u);
        for (i, o) in out.iter_mut().enumerate() {
            let gu = dot(self.gram.row(i), u);
            *o = gu - self.h[i] * sum_u - hu + (self.q + 1.0) * sum_u;
        }
    }
}

/// Dual-route solve using a precomputed [`LevelGram`].
#[allow(clippy::too_many_arguments)]
fn solve_dual(
    anchor: &[f64],
    level: &LevelState,
    centered: &CenteredGram<'_>,
    responses: &[f64],
    weights: &[f64],
    lambda: f64,
    cg_tol: f64,
    cg_maxiter: usize,
) -> RegressionOutput {
    let n = level.n_particles;
    let d = level.dim;
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let b: Vec<f64> = sqrt_w.iter().zip(responses).map(|(s, y)| s * y).collect();
    let mut tmp_in = vec![0.0; n];
    let mut tmp_out = vec![0.0; n];
    let cg = conjugate_gradient(
        |s, out| {
            for i in 0..n {
                tmp_in[i] = sqrt_w[i] * s[i];
            }
            centered.apply_kernel(&tmp_in, &mut tmp_out);
            for i in 0..n {
                out[i] = sqrt_w[i] * tmp_out[i] + lambda * s[i];
            }
        },
        &b,
        cg_tol,
        cg_maxiter,
    );
    // α = 𝐃ᵀ c with c = W^{½} s
    let mut alpha = 0.0;
    let mut alpha_x = vec![0.0; d];
    for ((x, sw), s) in level.particles().zip(&sqrt_w).zip(&cg.x) {
        let c = sw * s;
        if c == 0.0 {
            continue;
        }
        alpha += c;
        for i in 0..d {
            alpha_x[i] += c * (x[i] - anchor[i]);
        }
    }
    RegressionOutput {
        alpha,
        alpha_x,
        iterations: cg.iterations,
        residual_norm: cg.residual_norm,
        initial_residual_norm: cg.initial_residual_norm,
        converged: cg.converged,
        effective_weight_count: effective_count(weights),
        lambda,
        route: SolveRoute::Dual,
    }
}

/// Dual-route counterpart of [`solve_wls`]; builds the Gram matrix itself.
pub fn solve_wls_dual(
    m: usize,
    level: &LevelState,
    responses: &[f64],
    weights: &[f64],
    lambda: f64,
    cg_tol: f64,
    cg_maxiter: usize,
) -> Result<RegressionOutput> {
    check_anchor(m, level)?;
    check_responses(level, responses, weights)?;
    let gram = LevelGram::new(level);
    let centered = CenteredGram::for_particle(&gram, m);
    Ok(solve_dual(
        level.particle(m),
        level,
        &centered,
        responses,
        weights,
        lambda,
        cg_tol,
        cg_maxiter,
    ))
}

fn ridge_lambda(rule: RidgeRule, weights: &[f64], dist_sq: &[f64], d: usize) -> f64 {
    match rule {
        RidgeRule::Fixed(l) => l,
        RidgeRule::Auto { factor } => {
            let spread: f64 = weights.iter().zip(dist_sq).map(|(w, r)| w * r).sum();
            factor * spread / d as f64
        }
    }
}

/// Per-level regression context: shared Gram matrix and responses.
pub struct LevelRegressor<'a> {
    level: &'a LevelState,
    responses: &'a [f64],
    problem: &'a ProblemSpec,
    config: &'a SolverConfig,
    dt: f64,
    gram: Option<LevelGram>,
}

impl<'a> LevelRegressor<'a> {
    pub fn new(
        level: &'a LevelState,
        responses: &'a [f64],
        problem: &'a ProblemSpec,
        config: &'a SolverConfig,
        dt: f64,
    ) -> Result<Self> {
        if level.n_particles < 2 {
            return Err(Error::invalid("need at least two particles"));
        }
        check_responses(level, responses, responses)?;
        let gram = config.use_dual(level.dim).then(|| LevelGram::new(level));
        Ok(LevelRegressor {
            level,
            responses,
            problem,
            config,
            dt,
            gram,
        })
    }

    /// Gradient regression around particle `m`.
    pub fn fit(&self, m: usize) -> Result<RegressionOutput> {
        check_anchor(m, self.level)?;
        let anchor = self.level.particle(m);
        let centered = self.gram.as_ref().map(|g| CenteredGram::for_particle(g, m));
        self.fit_inner(m, anchor, centered)
    }

    /// Gradient regression around an arbitrary point.
    pub fn fit_at(&self, anchor: &[f64]) -> Result<RegressionOutput> {
        if anchor.len() != self.level.dim {
            return Err(Error::DimensionMismatch {
                expected: self.level.dim,
                got: anchor.len(),
            });
        }
        let centered = self
            .gram
            .as_ref()
            .map(|g| CenteredGram::for_point(g, self.level, anchor));
        self.fit_inner(usize::MAX, anchor, centered)
    }

    fn fit_inner(
        &self,
        label: usize,
        anchor: &[f64],
        centered: Option<CenteredGram<'_>>,
    ) -> Result<RegressionOutput> {
        let cfg = self.config;
        let dist = match &centered {
            Some(c) => c.dist_sq(),
            None => distances_sq(self.level, anchor),
        };
        let eps = bandwidth_from_distances(label, &dist, cfg.bandwidth, self.dt)?;
        let weights = weights_from_distances(label, &dist, eps, cfg.kernel)?;
        let lambda = ridge_lambda(cfg.ridge, &weights, &dist, self.level.dim);
        let maxiter = cfg.cg_maxiter_for(self.level.dim);
        Ok(match centered {
            Some(c) => solve_dual(
                anchor,
                self.level,
                &c,
                self.responses,
                &weights,
                lambda,
                cfg.cg_tol,
                maxiter,
            ),
            None => solve_wls_at(
                anchor,
                self.level,
                self.responses,
                &weights,
                lambda,
                cfg.cg_tol,
                maxiter,
            )?,
        })
    }

    /// `z = σᵀ(t_k, a)·α_x` from a fitted regression.
    pub fn to_z(&self, anchor: &[f64], fit: &RegressionOutput) -> Result<Vec<f64>> {
        self.problem
            .diffusion
            .apply_transpose(self.level.t, anchor, &fit.alpha_x)
    }
}

/// Bandwidth, weights, ridge solve and `σᵀ` for one anchor.
pub fn estimate_gradient(
    m: usize,
    level: &LevelState,
    responses: &[f64],
    problem: &ProblemSpec,
    config: &SolverConfig,
    dt: f64,
) -> Result<(Vec<f64>, RegressionOutput)> {
    let reg = LevelRegressor::new(level, responses, problem, config, dt)?;
    let fit = reg.fit(m).map_err(|e| e.at_particle(level.k, m))?;
    let z = reg.to_z(level.particle(m), &fit)?;
    Ok((z, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RegressionRoute;
    use crate::model::{builtin_problem, ProblemParams};

    fn lcg_points(m: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..m * d)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn level(m: usize, d: usize, seed: u64) -> LevelState {
        LevelState::from_positions(1, 0.1, d, lcg_points(m, d, seed)).unwrap()
    }

    #[test]
    fn kernel_shapes() {
        for k in [KernelSpec::Gaussian, KernelSpec::Epanechnikov] {
            assert_eq!(k.eval(0.0), 1.0);
            let mut prev = 1.0;
            for i in 1..30 {
                let v = k.eval(i as f64 * 0.1);
                assert!(v >= 0.0 && v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn equidistant_weights_uniform() {
        // anchor at the origin plus four points on the unit circle: the
        // anchor is nearer, so compare only the ring weights
        let lvl = LevelState::from_positions(0, 0.0, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap();
        let w = compute_weights(0, &lvl, 1.0, KernelSpec::Gaussian).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w[0] > w[1]);
        assert!((w[1] - w[3]).abs() < 1e-15);
        // every particle at the same distance from an external anchor
        let dist = vec![4.0; 5];
        let w = weights_from_distances(0, &dist, 1.0, KernelSpec::Gaussian).unwrap();
        for wi in w {
            assert!((wi - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_weights_known_values() {
        let eps = 0.5;
        let lvl = LevelState::from_positions(0, 0.0, 1, vec![0.0, eps, 2.0 * eps]).unwrap();
        let w = compute_weights(0, &lvl, eps, KernelSpec::Gaussian).unwrap();
        let raw = [1.0, (-1.0f64).exp(), (-4.0f64).exp()];
        let total: f64 = raw.iter().sum();
        for (a, r) in w.iter().zip(raw) {
            assert!((a - r / total).abs() < 1e-15);
        }
        // 1/(1 + e⁻¹ + e⁻⁴) to four digits
        let expected = [0.7214, 0.2654, 0.01321];
        for (a, b) in w.iter().zip(expected) {
            assert!(((a - b) / b).abs() < 5e-4, "{a} vs {b}");
        }
        assert!((w[1] / w[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn epanechnikov_zero_outside() {
        let lvl = LevelState::from_positions(0, 0.0, 1, vec![0.0, 0.5, 1.5]).unwrap();
        let w = compute_weights(0, &lvl, 1.0, KernelSpec::Epanechnikov).unwrap();
        assert_eq!(w[2], 0.0);
        assert!(w[0] > w[1]);
    }

    #[test]
    fn degenerate_compact_kernel() {
        let dist = vec![4.0, 9.0];
        let err = weights_from_distances(3, &dist, 1.0, KernelSpec::Epanechnikov).unwrap_err();
        assert!(matches!(err, Error::DegenerateNeighborhood { anchor: 3, .. }));
    }

    #[test]
    fn bandwidth_rules() {
        let lvl = LevelState::from_positions(0, 0.0, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, -1.0, -1.0, 0.0]).unwrap();
        assert_eq!(bandwidth(0, &lvl, BandwidthRule::MaxDistance, 0.1).unwrap(), 1.0);
        assert_eq!(bandwidth(1, &lvl, BandwidthRule::MaxDistance, 0.1).unwrap(), 2.0);
        assert!((bandwidth(0, &lvl, BandwidthRule::ScaledSqrtDt(2.0), 0.01).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(bandwidth(0, &lvl, BandwidthRule::Fixed(0.5), 0.01).unwrap(), 0.5);
        let same = LevelState::initial(&[1.0, 2.0], 3);
        assert!(matches!(
            bandwidth(0, &same, BandwidthRule::MaxDistance, 0.1),
            Err(Error::DegenerateNeighborhood { .. })
        ));
    }

    #[test]
    fn operator_single_particle() {
        // D = [[1, e1]], w = 1, v = (1, 0, 0) -> (1, 1, 0)
        let lvl = LevelState::from_positions(0, 0.0, 2, vec![1.0, 0.0]).unwrap();
        let mut out = vec![0.0; 3];
        normal_operator_apply(&lvl, &[0.0, 0.0], &[1.0], 0.0, &[1.0, 0.0, 0.0], &mut out);
        assert_eq!(out, vec![1.0, 1.0, 0.0]);
        normal_operator_apply(&lvl, &[0.0, 0.0], &[1.0], 3.0, &[0.0; 3], &mut out);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn affine_recovery() {
        let (m, d) = (30, 4);
        let lvl = level(m, d, 3);
        let g = [0.5, -1.0, 2.0, 0.25];
        let a = 1.5;
        let anchor = lvl.particle(7).to_vec();
        let y: Vec<f64> = lvl
            .particles()
            .map(|x| a + (0..d).map(|i| g[i] * (x[i] - anchor[i])).sum::<f64>())
            .collect();
        let w = compute_weights(7, &lvl, 1.0, KernelSpec::Gaussian).unwrap();
        for out in [
            solve_wls(7, &lvl, &y, &w, 0.0, 1e-14, 200).unwrap(),
            solve_wls_dual(7, &lvl, &y, &w, 0.0, 1e-14, 200).unwrap(),
        ] {
            assert!((out.alpha - a).abs() < 1e-8, "{out:?}");
            for i in 0..d {
                assert!((out.alpha_x[i] - g[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nan_responses_rejected() {
        let lvl = level(5, 2, 1);
        let w = vec![0.2; 5];
        let y = vec![0.0, f64::NAN, 0.0, 0.0, 0.0];
        assert!(matches!(solve_wls(0, &lvl, &y, &w, 1e-3, 1e-10, 10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn huge_ridge_shrinks() {
        let lvl = level(20, 3, 8);
        let y: Vec<f64> = (0..20).map(|j| (j as f64).sin()).collect();
        let w = compute_weights(0, &lvl, 1.0, KernelSpec::Gaussian).unwrap();
        let out = solve_wls(0, &lvl, &y, &w, 1e12, 1e-12, 50).unwrap();
        let b = normal_rhs(&lvl, lvl.particle(0), &w, &y);
        let bound = norm_sq(&b).sqrt() / 1e12;
        let norm = (out.alpha * out.alpha + norm_sq(&out.alpha_x)).sqrt();
        assert!(norm <= bound * (1.0 + 1e-9));
        assert!(norm < 1e-10);
    }

    #[test]
    fn constant_responses_zero_gradient() {
        let p = builtin_problem("linear_heat", 3, &ProblemParams::new()).unwrap();
        let lvl = level(12, 3, 4);
        let y = vec![2.5; 12];
        for route in [RegressionRoute::Primal, RegressionRoute::Dual] {
            let mut cfg = SolverConfig::default();
            cfg.route = route;
            let (z, fit) = estimate_gradient(2, &lvl, &y, &p, &cfg, 0.01).unwrap();
            // only the auto ridge (λ ~ 1e-8 of the spread) biases the slope
            assert!(z.iter().all(|v| v.abs() < 1e-6), "{z:?}");
            assert!((fit.alpha - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn z_scales_with_sigma() {
        let p = builtin_problem("linear_heat", 2, &ProblemParams::new().set("sigma", 2.0)).unwrap();
        let lvl = level(10, 2, 5);
        let g = [1.0, -3.0];
        let y: Vec<f64> = lvl.particles().map(|x| g[0] * x[0] + g[1] * x[1]).collect();
        let mut cfg = SolverConfig::default();
        cfg.ridge = RidgeRule::Fixed(0.0);
        cfg.cg_tol = 1e-14;
        let (z, fit) = estimate_gradient(0, &lvl, &y, &p, &cfg, 0.01).unwrap();
        for i in 0..2 {
            assert!((fit.alpha_x[i] - g[i]).abs() < 1e-8);
            assert!((z[i] - 2.0 * g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_zero_rhs() {
        let r = conjugate_gradient(|v, o| o.copy_from_slice(v), &[0.0, 0.0], 1e-10, 5);
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn cg_reports_non_convergence() {
        // one iteration cannot solve a 3x3 diagonal system with distinct entries
        let diag = [1.0, 2.0, 3.0];
        let r = conjugate_gradient(
            |v, o| {
                for i in 0..3 {
                    o[i] = diag[i] * v[i];
                }
            },
            &[1.0, 1.0, 1.0],
            1e-12,
            1,
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.residual_norm < r.initial_residual_norm);
    }

    #[test]
    fn fit_at_external_anchor_matches_routes() {
        let p = builtin_problem("linear_heat", 6, &ProblemParams::new()).unwrap();
        let lvl = level(9, 6, 21);
        let y: Vec<f64> = lvl.particles().map(|x| x.iter().map(|v| v * v).sum::<f64>()).collect();
        let anchor = vec![0.05; 6];
        let mut outs = Vec::new();
        for route in [RegressionRoute::Primal, RegressionRoute::Dual] {
            let mut cfg = SolverConfig::default();
            cfg.route = route;
            cfg.ridge = RidgeRule::Fixed(1e-3);
            cfg.cg_tol = 1e-13;
            let reg = LevelRegressor::new(&lvl, &y, &p, &cfg, 0.01).unwrap();
            outs.push(reg.fit_at(&anchor).unwrap());
        }
        assert_eq!(outs[0].route, SolveRoute::Primal);
        assert_eq!(outs[1].route, SolveRoute::Dual);
        assert!((outs[0].alpha - outs[1].alpha).abs() < 1e-9);
        for i in 0..6 {
            assert!((outs[0].alpha_x[i] - outs[1].alpha_x[i]).abs() < 1e-9);
        }
    }
}
